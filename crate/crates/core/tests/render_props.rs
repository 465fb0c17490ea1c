use proptest::prelude::*;
use tampkit::render::{render_observation, Target};
use tampkit::world::{sample_scene, SampleParams, Scene, Vec3};

fn shifted(s: &Scene, d: Vec3) -> Scene {
    let mut t = s.clone();
    for r in &mut t.regions {
        r.center = r.center + d;
    }
    for b in &mut t.bodies {
        b.center = b.center + d;
    }
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn planar_translation_only_moves_the_feature(seed in any::<u64>(), dx in -1.0f64..1.0, dy in -1.0f64..1.0) {
        let s = sample_scene(seed, &SampleParams::default()).unwrap();
        let t = shifted(&s, Vec3::new(dx, dy, 0.0));
        let a = render_observation(&s, Target::Body("target")).unwrap();
        let b = render_observation(&t, Target::Body("target")).unwrap();
        prop_assert!(a.channels == b.channels);
        prop_assert!((f64::from(b.feature[0] - a.feature[0]) - dx).abs() < 1e-5);
        prop_assert!((f64::from(b.feature[1] - a.feature[1]) - dy).abs() < 1e-5);
        prop_assert_eq!(a.feature[2], b.feature[2]);
    }

    #[test]
    fn pixels_are_heights_or_zero(seed in any::<u64>()) {
        let s = sample_scene(seed, &SampleParams::default()).unwrap();
        let o = render_observation(&s, Target::Body("target")).unwrap();
        let top = s.regions[0].top_z();
        let heights: Vec<f32> = s.bodies.iter().map(|b| (b.top() - top) as f32).collect();
        for (ch, allowed) in [(0, &heights[..1]), (1, &heights[1..])] {
            for &v in o.channel(ch) {
                prop_assert!(v == 0.0 || allowed.contains(&v));
            }
        }
        // The target covers the four central pixels.
        for (r, c) in [(49, 49), (49, 50), (50, 49), (50, 50)] {
            prop_assert_eq!(o.pixel(0, r, c), heights[0]);
        }
    }
}
