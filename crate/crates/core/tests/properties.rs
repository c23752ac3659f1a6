use cpgd_core::channel::{lambertian_gain, Optics, Point3};
use cpgd_core::cpgd::{greedy_order, rates_under_fixed_order};
use cpgd_core::rates::{achievable_rate, achievable_rate_raw, rate_margin, RateContext};
use cpgd_core::signaling::LayerStats;
use proptest::prelude::*;

fn context(gains: &[f64], noise_var: f64) -> RateContext {
    let stats: Vec<LayerStats> = (0..gains.len()).map(|l| LayerStats::gaussian(0.5 + 0.1 * l as f64)).collect();
    RateContext::from_layer_gains(gains.to_vec(), &stats, noise_var).unwrap()
}

fn optics() -> Optics {
    Optics {
        lambertian_order: 1.0,
        pd_area: 1e-4,
        refractive_index: 1.5,
        fov: 30f64.to_radians(),
    }
}

proptest! {
    // Decoding V ∪ W against G equals decoding V against W ∪ G, then W against G.
    #[test]
    fn rate_chain_rule(gains in prop::collection::vec(0.1f64..2.0, 5), noise_var in 0.01f64..1.0, split in 1usize..4) {
        let ctx = context(&gains, noise_var);
        let v: Vec<usize> = (0..split).collect();
        let w: Vec<usize> = (split..4).collect();
        let g = [4];
        let vw: Vec<usize> = (0..4).collect();
        let wg: Vec<usize> = (split..5).collect();
        let joint = achievable_rate_raw(&ctx, &vw, &g).unwrap();
        let chained = achievable_rate_raw(&ctx, &v, &wg).unwrap() + achievable_rate_raw(&ctx, &w, &g).unwrap();
        prop_assert!((joint - chained).abs() <= 1e-12 * joint.abs().max(1.0));
    }

    #[test]
    fn more_interference_never_helps(gains in prop::collection::vec(0.1f64..2.0, 4), noise_var in 0.01f64..1.0) {
        let ctx = context(&gains, noise_var);
        let quiet = achievable_rate(&ctx, &[0, 1], &[2]).unwrap();
        let loud = achievable_rate(&ctx, &[0, 1], &[2, 3]).unwrap();
        prop_assert!(loud <= quiet);
    }

    // The greedy rates are exactly the fixed-order rates of its own order, and
    // each group is decodable at them.
    #[test]
    fn greedy_rates_are_decodable(gains in prop::collection::vec(0.05f64..2.0, 5), noise_var in 0.01f64..1.0, tau in 1usize..=2) {
        let ctx = context(&gains, noise_var);
        let order = greedy_order(&ctx, tau).unwrap();
        prop_assert_eq!(&rates_under_fixed_order(&ctx, order.groups()).unwrap(), order.rates());
        let groups = order.groups();
        for (m, q) in groups.iter().enumerate() {
            let later: Vec<usize> = groups[m + 1..].iter().flatten().copied().collect();
            prop_assert!(rate_margin(&ctx, q, &later, order.rates()).unwrap() >= -1e-12);
        }
    }

    #[test]
    fn gain_is_mirror_symmetric(x in -1.5f64..1.5, y in -1.5f64..1.5, z in 0.5f64..3.0) {
        let o = optics();
        let tx = Point3::new(0.2, -0.1, 0.0);
        let a = lambertian_gain(&o, tx, Point3::new(0.2 + x, -0.1 + y, z), 0.9).unwrap();
        let b = lambertian_gain(&o, tx, Point3::new(0.2 - x, -0.1 + y, z), 0.9).unwrap();
        let c = lambertian_gain(&o, tx, Point3::new(0.2 + y, -0.1 + x, z), 0.9).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert_eq!(a, b);
        prop_assert_eq!(a, c);
        // Nothing reaches a receiver above the transmitter plane.
        prop_assert_eq!(lambertian_gain(&o, tx, Point3::new(0.2 + x, -0.1 + y, -z), 0.9).unwrap(), 0.0);
    }

    #[test]
    fn gain_falls_with_depth(z in 0.5f64..3.0, dz in 0.01f64..1.0) {
        let o = optics();
        let near = lambertian_gain(&o, Point3::new(0.0, 0.0, 0.0), Point3::new(0.0, 0.0, z), 1.0).unwrap();
        let far = lambertian_gain(&o, Point3::new(0.0, 0.0, 0.0), Point3::new(0.0, 0.0, z + dz), 1.0).unwrap();
        prop_assert!(far < near);
    }
}
