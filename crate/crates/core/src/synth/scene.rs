use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::{DynamicPrimitive, Primitive, SceneSpec, Shape, MAX_SEQUENCE_SECONDS};

/// Deterministic scene from a seed: a ground disk, 3–8 static primitives
/// inside a 4–10 m extent, and with 30% probability one dynamic primitive
/// slow enough to stay inside the extent for any supported sequence.
pub fn generate_scene(seed: u64) -> SceneSpec {
    let mut rng = ChaCha12Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1));
    let extent = rng.random_range(4.0..10.0);
    let ground_albedo = [
        rng.random_range(0.25..0.8),
        rng.random_range(0.25..0.8),
        rng.random_range(0.25..0.8),
    ];
    let n_static = rng.random_range(3..=8);
    let mut statics = Vec::with_capacity(n_static);
    for _ in 0..n_static {
        let albedo = [
            rng.random_range(0.1..0.95),
            rng.random_range(0.1..0.95),
            rng.random_range(0.1..0.95),
        ];
        let x = rng.random_range(-0.35..0.35) * extent;
        let z = rng.random_range(-0.35..0.35) * extent;
        if rng.random_bool(0.5) {
            let radius = rng.random_range(0.3..1.2);
            let y = if rng.random_bool(0.7) {
                radius // resting on the ground
            } else {
                radius + rng.random_range(0.0..1.5)
            };
            statics.push(Primitive {
                center: [x, y, z],
                shape: Shape::Sphere { radius },
                albedo,
            });
        } else {
            let half = [
                rng.random_range(0.3..1.0),
                rng.random_range(0.3..1.0),
                rng.random_range(0.3..1.0),
            ];
            statics.push(Primitive {
                center: [x, half[1], z],
                shape: Shape::Box { half },
                albedo,
            });
        }
    }

    let dynamic = if rng.random_bool(0.3) {
        let radius = rng.random_range(0.2..0.5);
        let x = rng.random_range(-0.2..0.2) * extent;
        let z = rng.random_range(-0.2..0.2) * extent;
        let y = radius + rng.random_range(0.3..1.2);
        let dir = rng.random_range(0.0..std::f64::consts::TAU);
        // Keep the primitive inside 0.45 * extent for the whole supported
        // duration.
        let travel_budget = (0.45 * extent - (x * x + z * z).sqrt() - radius).max(0.1);
        let speed = rng
            .random_range(0.1..0.5f64)
            .min(travel_budget / MAX_SEQUENCE_SECONDS);
        Some(DynamicPrimitive {
            primitive: Primitive {
                center: [x, y, z],
                shape: Shape::Sphere { radius },
                albedo: [
                    rng.random_range(0.2..0.95),
                    rng.random_range(0.2..0.95),
                    rng.random_range(0.2..0.95),
                ],
            },
            velocity: [speed * dir.cos(), 0.0, speed * dir.sin()],
        })
    } else {
        None
    };

    SceneSpec {
        ground_radius: 1.5 * extent,
        ground_albedo,
        statics,
        dynamic,
        extent,
    }
}
