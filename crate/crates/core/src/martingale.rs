//! Averages, martingale differences and the `L^p` / square-function norms
//! built from them.
//!
//! Zero-mass convention: `⟨f⟩_Q = 0` whenever `m(Q) = 0`. Identities that
//! involve averages therefore only hold on leaves of positive mass.

use crate::error::{Error, Result};
use crate::exponent::Exponent;
use crate::function::StepFunction;
use crate::lattice::CubeId;
use crate::measure::Measure;

/// `∫_Q f dm`.
pub fn integral(f: &StepFunction, cube: CubeId, m: &Measure) -> f64 {
    m.lattice().leaves(cube).iter().map(|&i| f.value(i) * m.leaf(i)).sum()
}

/// `⟨f⟩_Q^m`, zero when `m(Q) = 0`.
pub fn average(f: &StepFunction, cube: CubeId, m: &Measure) -> f64 {
    let mass = m.mass(cube);
    if mass > 0.0 {
        integral(f, cube, m) / mass
    } else {
        0.0
    }
}

/// Averages of `f` over every cube of the lattice, indexed by `CubeId`.
pub fn cube_averages(f: &StepFunction, m: &Measure) -> Vec<f64> {
    let lat = m.lattice();
    let mut integrals = vec![0.0; lat.num_cubes()];
    for pos in 0..lat.num_leaves() {
        integrals[lat.leaf_cube(pos).0] = f.value(pos) * m.leaf(pos);
    }
    for level in (0..lat.depth()).rev() {
        for id in lat.level_ids(level) {
            integrals[id.0] = lat.children(id).iter().map(|c| integrals[c.0]).sum();
        }
    }
    lat.ids()
        .map(|id| {
            let mass = m.mass(id);
            if mass > 0.0 {
                integrals[id.0] / mass
            } else {
                0.0
            }
        })
        .collect()
}

/// `⟨f, g⟩_m = ∫ f g dm`.
pub fn inner(f: &StepFunction, g: &StepFunction, m: &Measure) -> f64 {
    f.values()
        .iter()
        .zip(g.values())
        .zip(m.leaf_masses())
        .map(|((a, b), w)| a * b * w)
        .sum()
}

/// `Δ_Q^m f = Σ_{Q' ∈ ch(Q)} ⟨f⟩_{Q'} 1_{Q'} − ⟨f⟩_Q 1_Q`.
pub fn martingale_difference(f: &StepFunction, cube: CubeId, m: &Measure) -> Result<StepFunction> {
    let lat = m.lattice();
    if lat.is_leaf(cube) {
        return Err(Error::domain(format!(
            "martingale difference of leaf cube {}",
            lat.cube(cube)
        )));
    }
    let top = average(f, cube, m);
    let mut out = StepFunction::zeros(lat.num_leaves());
    for &child in lat.children(cube) {
        let a = average(f, child, m) - top;
        for &pos in lat.leaves(child) {
            out.values_mut()[pos] = a;
        }
    }
    Ok(out)
}

pub(crate) fn lp_norm_unchecked(values: &[f64], p: f64, m: &Measure) -> f64 {
    let s: f64 = values
        .iter()
        .zip(m.leaf_masses())
        .map(|(v, w)| if *w > 0.0 { v.abs().powf(p) * w } else { 0.0 })
        .sum();
    s.powf(1.0 / p)
}

/// `‖f‖_{L^p(m)}` for `1 < p < ∞`.
pub fn lp_norm(f: &StepFunction, p: f64, m: &Measure) -> Result<f64> {
    let p = Exponent::new(p)?;
    Ok(lp_norm_unchecked(f.values(), p.get(), m))
}

/// `‖(Σ_i f_i²)^{1/2}‖_{L^p(m)}`.
pub fn vector_l2_lp_norm(fs: &[StepFunction], p: f64, m: &Measure) -> Result<f64> {
    let p = Exponent::new(p)?;
    let len = m.lattice().num_leaves();
    if let Some(bad) = fs.iter().find(|f| f.len() != len) {
        return Err(Error::Length {
            expected: len,
            got: bad.len(),
        });
    }
    let pointwise: Vec<f64> = (0..len)
        .map(|i| fs.iter().map(|f| f.value(i).powi(2)).sum::<f64>().sqrt())
        .collect();
    Ok(lp_norm_unchecked(&pointwise, p.get(), m))
}

fn check_level(k: usize, m: &Measure) -> Result<()> {
    let depth = m.lattice().depth();
    if k > depth {
        return Err(Error::domain(format!("top level {k} exceeds depth {depth}")));
    }
    Ok(())
}

/// The martingale square function norm
/// `‖(Σ_{Q ∈ 𝒟_k} |⟨f⟩_Q|² 1_Q + Σ_{l(Q) ≤ 2^{-k}} |Δ_Q f|²)^{1/2}‖_{L^p(m)}`.
pub fn square_function_norm(f: &StepFunction, k: usize, m: &Measure, p: f64) -> Result<f64> {
    let p = Exponent::new(p)?;
    check_level(k, m)?;
    let lat = m.lattice();
    let avg = cube_averages(f, m);
    let depth = lat.depth();
    let pointwise: Vec<f64> = (0..lat.num_leaves())
        .map(|pos| {
            let mut s = avg[lat.cube_of_leaf_at_level(pos, k).0].powi(2);
            for level in k..depth {
                let here = avg[lat.cube_of_leaf_at_level(pos, level).0];
                let below = avg[lat.cube_of_leaf_at_level(pos, level + 1).0];
                s += (below - here).powi(2);
            }
            s.sqrt()
        })
        .collect();
    Ok(lp_norm_unchecked(&pointwise, p.get(), m))
}

/// `Σ_{Q ∈ 𝒟_k} ⟨f⟩_Q 1_Q + Σ_{l(Q) ≤ 2^{-k}} Δ_Q f`, term by term.
pub fn reconstruct(f: &StepFunction, k: usize, m: &Measure) -> Result<StepFunction> {
    check_level(k, m)?;
    let lat = m.lattice();
    let mut out = StepFunction::zeros(lat.num_leaves());
    for q in lat.level_ids(k) {
        let a = average(f, q, m);
        for &pos in lat.leaves(q) {
            out.values_mut()[pos] += a;
        }
    }
    for level in k..lat.depth() {
        for q in lat.level_ids(level) {
            let d = martingale_difference(f, q, m)?;
            out.add_scaled(1.0, &d);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::lattice::DyadicLattice;

    fn unit(depth: usize) -> (Arc<DyadicLattice>, Measure) {
        let lat = Arc::new(DyadicLattice::new(1, depth).unwrap());
        let m = Measure::lebesgue(lat.clone());
        (lat, m)
    }

    #[test]
    fn indicator_averages() {
        let (lat, m) = unit(1);
        let f = StepFunction::new(vec![1.0, 0.0]);
        assert!((average(&f, lat.root(), &m) - 0.5).abs() < 1e-15);

        let (lat, m) = unit(2);
        let f = StepFunction::new(vec![1.0, 0.0, 0.0, 0.0]);
        let half = lat.children(lat.root())[0];
        assert!((average(&f, half, &m) - 0.5).abs() < 1e-15);

        let c = StepFunction::constant(&lat, 3.25);
        for id in lat.ids() {
            assert!((average(&c, id, &m) - 3.25).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_mass_average_is_zero() {
        let lat = Arc::new(DyadicLattice::new(1, 1).unwrap());
        let m = Measure::new(lat.clone(), vec![0.0, 1.0]).unwrap();
        let f = StepFunction::new(vec![5.0, 1.0]);
        assert_eq!(average(&f, lat.leaf_cube(0), &m), 0.0);
    }

    #[test]
    fn difference_of_half_indicator() {
        let (lat, m) = unit(1);
        let f = StepFunction::new(vec![1.0, 0.0]);
        let d = martingale_difference(&f, lat.root(), &m).unwrap();
        assert_eq!(d.values(), &[0.5, -0.5]);
        assert!(inner(&d, &StepFunction::constant(&lat, 1.0), &m).abs() < 1e-15);
        assert!(martingale_difference(&f, lat.leaf_cube(0), &m).is_err());
    }

    #[test]
    fn difference_with_single_massive_child_vanishes_a_e() {
        let lat = Arc::new(DyadicLattice::new(1, 2).unwrap());
        let m = Measure::new(lat.clone(), vec![0.3, 0.7, 0.0, 0.0]).unwrap();
        let f = StepFunction::new(vec![1.0, -2.0, 4.0, 9.0]);
        let d = martingale_difference(&f, lat.root(), &m).unwrap();
        for pos in m.support() {
            assert!(d.value(pos).abs() < 1e-15);
        }
    }

    #[test]
    fn lp_norm_cases() {
        let (lat, m) = unit(1);
        let one = StepFunction::constant(&lat, 1.0);
        for p in [1.1, 2.0, 3.7] {
            assert!((lp_norm(&one, p, &m).unwrap() - 1.0).abs() < 1e-14);
        }
        let f = StepFunction::new(vec![2.0, 0.0]);
        assert!((lp_norm(&f, 2.0, &m).unwrap() - 2f64.sqrt()).abs() < 1e-14);
        let g = StepFunction::new(vec![0.3, -1.2]);
        let a = lp_norm(&g.scale(-2.5), 3.0, &m).unwrap();
        assert!((a - 2.5 * lp_norm(&g, 3.0, &m).unwrap()).abs() < 1e-14);
        assert!(matches!(lp_norm(&f, 1.0, &m), Err(Error::Exponent(_))));
        assert!(lp_norm(&f, f64::INFINITY, &m).is_err());
    }

    #[test]
    fn vector_norm_cases() {
        let (lat, m) = unit(2);
        let f = StepFunction::new(vec![0.5, -1.0, 2.0, 0.1]);
        let single = vector_l2_lp_norm(std::slice::from_ref(&f), 3.0, &m).unwrap();
        assert!((single - lp_norm(&f, 3.0, &m).unwrap()).abs() < 1e-14);

        let a = StepFunction::indicator(&lat, lat.leaf_cube(0));
        let b = StepFunction::indicator(&lat, lat.leaf_cube(2)).scale(3.0);
        let v = vector_l2_lp_norm(&[a.clone(), b.clone()], 1.7, &m).unwrap();
        assert!((v - lp_norm(&(&a + &b), 1.7, &m).unwrap()).abs() < 1e-14);

        let copies = vec![f.clone(); 4];
        let v = vector_l2_lp_norm(&copies, 2.5, &m).unwrap();
        assert!((v - 2.0 * lp_norm(&f, 2.5, &m).unwrap()).abs() < 1e-13);
    }

    #[test]
    fn square_function_of_constant() {
        let lat = Arc::new(DyadicLattice::new(2, 2).unwrap());
        let m = Measure::new(lat.clone(), (0..16).map(|i| (i + 1) as f64 / 136.0).collect()).unwrap();
        let c = StepFunction::constant(&lat, -1.5);
        for p in [1.3, 2.0, 5.0] {
            let s = square_function_norm(&c, 0, &m, p).unwrap();
            assert!((s - 1.5).abs() < 1e-12);
        }
        assert!(square_function_norm(&c, 3, &m, 2.0).is_err());
    }

    #[test]
    fn reconstruction_top_level_only() {
        let (lat, m) = unit(3);
        let f = StepFunction::from_fn(lat.num_leaves(), |i| (i as f64).cos());
        let r = reconstruct(&f, 3, &m).unwrap();
        for i in 0..lat.num_leaves() {
            assert!((r.value(i) - f.value(i)).abs() < 1e-12);
        }
    }
}
