//! Property tests for the projection, optimizer, and codec invariants.

use proptest::prelude::*;

use admm_compress::model::{decode_gaps, encode_gaps, pack_codes, unpack_codes};
use admm_compress::optim::{OptimizerConfig, OptimizerState};
use admm_compress::projection::{
    cluster_sse, init_centroids, project_cluster, project_quantize, project_sparsity, ClusterSpec,
    QuantSpec,
};
use admm_compress::tensor::{PruneMask, WeightTensor};

fn small_values() -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-2.0f32..2.0, 1..12)
}

proptest! {
    #[test]
    fn sparsity_projection_is_idempotent_and_optimal(values in small_values(), frac in 0.0f64..=1.0) {
        let t = WeightTensor::from_vec(values);
        let alpha = ((t.numel() as f64) * frac).floor() as usize;
        let (p1, mask) = project_sparsity(&t, alpha).unwrap();
        prop_assert_eq!(mask.count_ones(), alpha);
        prop_assert!(mask.respected_by(&p1));
        let (p2, _) = project_sparsity(&p1, alpha).unwrap();
        prop_assert_eq!(p1.data(), p2.data());

        // Optimality vs brute force.
        let mut best = f64::INFINITY;
        let n = t.numel();
        for bitmask in 0u32..(1 << n) {
            if (bitmask.count_ones() as usize) != alpha {
                continue;
            }
            let d: f64 = t
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| if bitmask & (1 << i) != 0 { 0.0 } else { (v as f64) * (v as f64) })
                .sum();
            best = best.min(d);
        }
        prop_assert!((t.dist_sq(&p1) - best).abs() <= 1e-12);
    }

    #[test]
    fn quantize_projection_is_idempotent_and_zero_preserving(
        values in small_values(),
        half in 1usize..=8,
        q in 0.01f32..1.0,
        mask_bits in prop::collection::vec(any::<bool>(), 12),
    ) {
        let n = values.len();
        let t = WeightTensor::from_vec(values);
        let mask = PruneMask::new(vec![n], mask_bits[..n].to_vec()).unwrap();
        let spec = QuantSpec::new(2 * half, q).unwrap();
        let p1 = project_quantize(&t, &spec, &mask);
        prop_assert!(mask.respected_by(&p1));
        let p2 = project_quantize(&p1, &spec, &mask);
        prop_assert_eq!(p1.data(), p2.data());
        // Surviving entries sit on levels.
        let levels = spec.levels();
        for (&v, &k) in p1.data().iter().zip(mask.keep()) {
            if k {
                prop_assert!(levels.iter().any(|&l| l.to_bits() == v.to_bits()));
            }
        }
    }

    #[test]
    fn repeated_cluster_projection_never_increases_sse(values in prop::collection::vec(-2.0f32..2.0, 4..24), m in 2usize..=4) {
        let n = values.len();
        let t = WeightTensor::from_vec(values.clone());
        let mask = PruneMask::all_ones(vec![n]);
        let init = init_centroids(&t, &mask, m, 7).unwrap();
        let mut spec = ClusterSpec::new(m, init.centroids).unwrap();
        let mut prev = cluster_sse(&values, &spec.centroids);
        let mut cur = t;
        for _ in 0..4 {
            let (projected, updated) = project_cluster(&cur, &spec, &mask).unwrap();
            // SSE against the updated centroids never exceeds the previous
            // assignment's SSE (Lloyd monotonicity).
            let sse = cluster_sse(&values, &updated.centroids);
            prop_assert!(sse <= prev + 1e-6, "sse {} > prev {}", sse, prev);
            prev = sse;
            spec = updated;
            let distinct: std::collections::BTreeSet<u32> =
                projected.data().iter().map(|v| v.to_bits()).collect();
            prop_assert!(distinct.len() <= m);
            cur = WeightTensor::from_vec(values.clone());
        }
    }

    #[test]
    fn masked_entries_survive_any_update_sequence(
        grads in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 6), 1..6),
        mask_bits in prop::collection::vec(any::<bool>(), 6),
    ) {
        let mut opt = OptimizerState::new(OptimizerConfig::adam(0.05), &[6]);
        let mut w: Vec<f32> = (0..6).map(|i| i as f32 * 0.3 - 1.0).collect();
        let orig = w.clone();
        for g in &grads {
            opt.begin_step();
            opt.update(0, &mut w, g, Some(&mask_bits)).unwrap();
        }
        for i in 0..6 {
            if !mask_bits[i] {
                prop_assert_eq!(w[i].to_bits(), orig[i].to_bits());
            }
        }
    }

    #[test]
    fn gap_stream_round_trips_any_mask(keep in prop::collection::vec(any::<bool>(), 1..200)) {
        let n = keep.len();
        let mask = PruneMask::new(vec![n], keep).unwrap();
        let stream = encode_gaps(&mask);
        let back = decode_gaps(&stream, mask.count_ones(), n, &[n]).unwrap();
        prop_assert_eq!(mask, back);
    }

    #[test]
    fn code_packing_round_trips(bits in 1u32..=16, codes in prop::collection::vec(0u32..65536, 0..64)) {
        let max = (1u64 << bits) as u32;
        let codes: Vec<u32> = codes.into_iter().map(|c| c % max).collect();
        let packed = pack_codes(&codes, bits);
        let unpacked = unpack_codes(&packed, codes.len(), bits).unwrap();
        prop_assert_eq!(codes, unpacked);
    }
}
