//! Property tests over randomized masks, payloads, and gossip inputs.

use dispfl::gossip;
use dispfl::mask::{self, Mask};
use dispfl::model::{Layer, LayerShape, Model};
use proptest::prelude::*;

fn arb_mask_bits(len: usize) -> impl Strategy<Value = Vec<u8>> {
    proptest::collection::vec(0u8..=1, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hamming_is_a_metric(
        a in arb_mask_bits(48),
        b in arb_mask_bits(48),
        c in arb_mask_bits(48),
    ) {
        let ma = Mask::new(vec![a]);
        let mb = Mask::new(vec![b]);
        let mc = Mask::new(vec![c]);
        let (dab, nab) = mask::hamming_distance(&ma, &mb).unwrap();
        let (dba, _) = mask::hamming_distance(&mb, &ma).unwrap();
        let (dac, _) = mask::hamming_distance(&ma, &mc).unwrap();
        let (dcb, _) = mask::hamming_distance(&mc, &mb).unwrap();
        prop_assert_eq!(dab, dba);
        prop_assert!((0.0..=1.0).contains(&nab));
        prop_assert_eq!(dab == 0, ma == mb);
        prop_assert!(dab <= dac + dcb);
    }

    #[test]
    fn union_density_dominates_members(
        a in arb_mask_bits(64),
        b in arb_mask_bits(64),
    ) {
        let ma = Mask::new(vec![a]);
        let mb = Mask::new(vec![b]);
        let u = mask::mask_union_density(&[ma.clone(), mb.clone()]).unwrap();
        prop_assert!(u >= mask::density(&ma) - 1e-15);
        prop_assert!(u >= mask::density(&mb) - 1e-15);
    }

    #[test]
    fn payload_roundtrip_is_bit_exact(
        weights in proptest::collection::vec(-1.0f32..1.0, 24),
        bits in arb_mask_bits(24),
        bias in proptest::collection::vec(-1.0f32..1.0, 4),
    ) {
        let shapes = vec![LayerShape::new(6, 4, true)];
        let mask = Mask::new(vec![bits]);
        let model = Model::new(shapes, vec![Layer { weights, bias: Some(bias) }])
            .unwrap()
            .masked(&mask)
            .unwrap();
        let payload = gossip::to_payload(&model, &mask).unwrap();
        let (back, back_mask) = gossip::from_payload(&payload).unwrap();
        prop_assert_eq!(back, model);
        prop_assert_eq!(back_mask, mask);
    }

    #[test]
    fn aggregate_support_and_hull(
        own_w in proptest::collection::vec(-1.0f32..1.0, 12),
        own_bits in arb_mask_bits(12),
        peer_w in proptest::collection::vec(-1.0f32..1.0, 12),
        peer_bits in arb_mask_bits(12),
    ) {
        let shapes = vec![LayerShape::new(4, 3, false)];
        let own_mask = Mask::new(vec![own_bits]);
        let own = Model::new(shapes.clone(), vec![Layer { weights: own_w, bias: None }])
            .unwrap()
            .masked(&own_mask)
            .unwrap();
        let peer_mask = Mask::new(vec![peer_bits]);
        let peer = Model::new(shapes, vec![Layer { weights: peer_w, bias: None }])
            .unwrap()
            .masked(&peer_mask)
            .unwrap();
        let out = gossip::aggregate((&own, &own_mask), &[(peer.clone(), peer_mask.clone())]).unwrap();
        for i in 0..12 {
            let w = out.layers()[0].weights[i];
            if own_mask.layer(0)[i] == 0 {
                prop_assert_eq!(w, 0.0);
            } else {
                let mut lo = own.layers()[0].weights[i];
                let mut hi = lo;
                if peer_mask.layer(0)[i] == 1 {
                    lo = lo.min(peer.layers()[0].weights[i]);
                    hi = hi.max(peer.layers()[0].weights[i]);
                }
                prop_assert!(w >= lo - 1e-6 && w <= hi + 1e-6);
            }
        }
    }

    #[test]
    fn erk_counts_are_exact(density in 0.05f64..1.0) {
        let shapes = vec![LayerShape::new(7, 9, true), LayerShape::new(9, 3, true)];
        let densities = mask::erk_layer_densities(&shapes, density).unwrap();
        let mut rng = dispfl::rng::derive(1, dispfl::rng::Stream::InitMask, 0, 0);
        let m = mask::erk_init(&shapes, density, &mut rng).unwrap();
        for (l, (s, d)) in shapes.iter().zip(&densities).enumerate() {
            let expected = (d * s.weight_count() as f64).round() as usize;
            prop_assert_eq!(m.ones_in_layer(l), expected.min(s.weight_count()));
        }
    }
}
