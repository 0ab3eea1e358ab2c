//! Kernel-granular sparsity for convolutional layers.
//!
//! A convolutional connection is a whole `k×k` kernel between an input map and
//! an output map, so a [`KernelSet`] is a [`ConnectionSet`] whose block is
//! `k*k`. Importance is tracked per element and summed per kernel; feature-map
//! importance sums the kernels touching the map. Drop and grow then work on
//! whole kernels exactly as scalar rewiring works on single weights.

use crate::error::{Error, Result};
use crate::topology::{
    self, ConnectionSet, Coord, LayerLedger, OccupancyGrid, PrevImportance, RewireOutcome, Side,
};

pub type KernelSet = ConnectionSet;

pub fn kernel_set(
    task: usize,
    layer: usize,
    kernel: usize,
    coords: Vec<Coord>,
    values: Vec<f32>,
) -> Result<KernelSet> {
    if kernel == 0 {
        return Err(Error::config("kernel size must be positive"));
    }
    ConnectionSet::new(task, layer, kernel * kernel, coords, values)
}

/// Ω per kernel, keyed like the kernel set.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelLedger {
    pub coords: Vec<Coord>,
    pub omega: Vec<f64>,
}

/// Sums element-wise Ω over each kernel's `k×k` entries.
pub fn kernel_importance(set: &KernelSet, elements: &LayerLedger) -> Result<KernelLedger> {
    if !elements.is_aligned_with(set) {
        return Err(Error::contract("element ledger not aligned with kernel set"));
    }
    Ok(KernelLedger { coords: set.coords().to_vec(), omega: elements.connection_omega() })
}

/// Per-map sum of kernel Ω: ingoing for hidden maps, outgoing for input channels.
pub fn feature_map_importance(kernels: &KernelLedger, maps: usize, side: Side) -> Vec<f64> {
    topology::neuron_importance(&kernels.coords, &kernels.omega, maps, side)
}

/// Whole-kernel drop/grow for one epoch. Grown kernels are all-zero and get
/// the same one-epoch drop exemption as scalar connections.
pub fn rewire_kernels_epoch(
    set: &mut KernelSet,
    ledger: &mut LayerLedger,
    r: f64,
    occupancy: &mut OccupancyGrid,
    allowed_in_maps: &[u32],
    allowed_out_maps: &[u32],
    prev: &PrevImportance,
) -> Result<RewireOutcome> {
    topology::rewire_epoch(set, ledger, r, occupancy, allowed_in_maps, allowed_out_maps, prev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    fn kset(coords: Vec<Coord>, k: usize) -> KernelSet {
        let n = coords.len() * k * k;
        kernel_set(0, 1, k, coords, vec![0.1; n]).unwrap()
    }

    #[test]
    fn kernel_sums() {
        let s = kset(vec![(0, 0), (1, 0)], 3);
        let zero = LayerLedger::for_set(&s);
        assert_eq!(kernel_importance(&s, &zero).unwrap().omega, vec![0.0, 0.0]);
        let ones = LayerLedger::with_omega(&s, vec![1.0; 18]);
        assert_eq!(kernel_importance(&s, &ones).unwrap().omega, vec![9.0, 9.0]);
    }

    #[test]
    fn kernel_sums_match_brute_force() {
        let mut rng = seed::rng(21);
        let coords: Vec<Coord> = (0..6).map(|n| (n / 3, n % 3)).collect();
        let s = kset(coords, 3);
        let om: Vec<f64> = (0..54).map(|_| rng.gen_range(0.0..2.0)).collect();
        let l = LayerLedger::with_omega(&s, om.clone());
        let kl = kernel_importance(&s, &l).unwrap();
        for n in 0..6 {
            let mut want = 0.0;
            for e in 0..9 {
                want += om[n * 9 + e];
            }
            assert!((kl.omega[n] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn map_importance() {
        let kl = KernelLedger { coords: vec![(0, 2), (1, 2), (1, 0)], omega: vec![0.5, 0.25, 2.0] };
        assert_eq!(feature_map_importance(&kl, 3, Side::Ingoing), vec![2.0, 0.0, 0.75]);
        assert_eq!(feature_map_importance(&kl, 2, Side::Outgoing), vec![0.5, 2.25]);
        let empty = KernelLedger { coords: vec![], omega: vec![] };
        assert_eq!(feature_map_importance(&empty, 2, Side::Ingoing), vec![0.0, 0.0]);
    }

    #[test]
    fn map_importance_matches_brute_force() {
        let mut rng = seed::rng(4);
        let coords: Vec<Coord> = (0..5u32).flat_map(|i| (0..4u32).map(move |o| (i, o))).filter(|&(i, o)| (i + o) % 3 != 0).collect();
        let omega: Vec<f64> = coords.iter().map(|_| rng.gen_range(0.0..1.0)).collect();
        let kl = KernelLedger { coords: coords.clone(), omega: omega.clone() };
        let a = feature_map_importance(&kl, 4, Side::Ingoing);
        for o in 0..4u32 {
            let want: f64 = coords.iter().zip(&omega).filter(|(c, _)| c.1 == o).map(|(_, w)| w).sum();
            assert!((a[o as usize] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_rewire_conserves_and_zero_fills() {
        let mut s = kset(vec![(0, 0), (0, 1), (1, 1), (2, 0), (2, 1)], 3);
        let mut occ = OccupancyGrid::from_sets(3, 3, [&s]).unwrap();
        let mut l = LayerLedger::for_set(&s);
        let out = rewire_kernels_epoch(&mut s, &mut l, 0.4, &mut occ, &[0, 1, 2], &[0, 1, 2], &PrevImportance::Outgoing).unwrap();
        assert_eq!(s.len(), 5);
        // All importances zero: drop the two smallest coords, regrow lexicographically.
        assert_eq!(out.dropped, vec![(0, 0), (0, 1)]);
        assert_eq!(out.grown, vec![(0, 0), (0, 1)]);
        for c in out.grown {
            let n = s.coords().binary_search(&c).unwrap();
            assert!(s.values()[n * 9..(n + 1) * 9].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn one_by_one_kernels_match_scalar_rewire() {
        let mut rng = seed::rng(77);
        for _ in 0..20 {
            let mut coords: Vec<Coord> = Vec::new();
            for i in 0..6u32 {
                for j in 0..5u32 {
                    if rng.gen_bool(0.4) {
                        coords.push((i, j));
                    }
                }
            }
            let omega: Vec<f64> = coords.iter().map(|_| (rng.gen_range(0..4) as f64) * 0.5).collect();
            let vals: Vec<f32> = coords.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut scalar = ConnectionSet::new(0, 1, 1, coords.clone(), vals.clone()).unwrap();
            let mut kernels = kernel_set(0, 1, 1, coords.clone(), vals).unwrap();
            let mut ls = LayerLedger::with_omega(&scalar, omega.clone());
            let mut lk = LayerLedger::with_omega(&kernels, omega);
            let mut occ_s = OccupancyGrid::from_sets(6, 5, [&scalar]).unwrap();
            let mut occ_k = occ_s.clone();
            let rows: Vec<u32> = (0..6).collect();
            let cols: Vec<u32> = (0..5).collect();
            let a = topology::rewire_epoch(&mut scalar, &mut ls, 0.3, &mut occ_s, &rows, &cols, &PrevImportance::Outgoing).unwrap();
            let b = rewire_kernels_epoch(&mut kernels, &mut lk, 0.3, &mut occ_k, &rows, &cols, &PrevImportance::Outgoing).unwrap();
            assert_eq!(a, b);
            assert_eq!(scalar, kernels);
            assert_eq!(occ_s, occ_k);
        }
    }
}
