//! Property tests for the camera/geometry pipeline under randomized rigid
//! poses: round trips, mask propagation, and frame-anchoring laws.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use proptest::prelude::*;
use vcgeo_core::geometry::{
    global_to_local_depth, project, radius_map, to_global_coords, to_global_normals, unproject,
    Attribute, Extrinsics, GeoMap, Intrinsics,
};

fn arb_pose() -> impl Strategy<Value = Extrinsics> {
    (
        -3.0f64..3.0,
        -3.0f64..3.0,
        -3.0f64..3.0,
        -1.0f64..1.0,
        -1.0f64..1.0,
        -1.0f64..1.0,
    )
        .prop_map(|(roll, pitch, yaw, tx, ty, tz)| {
            let r: Matrix3<f64> = UnitQuaternion::from_euler_angles(roll, pitch, yaw).to_rotation_matrix().into();
            Extrinsics::from_rotation_translation(r, Vector3::new(tx, ty, tz)).unwrap()
        })
}

fn arb_depth_map() -> impl Strategy<Value = GeoMap> {
    proptest::collection::vec(0.5f32..8.0, 12).prop_map(|vals| {
        let mut m = GeoMap::new(Attribute::Depth, 3, 4);
        m.values.copy_from_slice(&vals);
        m
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unproject_global_project_round_trip(
        e1 in arb_pose(),
        ei in arb_pose(),
        depth in arb_depth_map(),
    ) {
        let k = Intrinsics { fx: 30.0, fy: 28.0, cx: 1.5, cy: 1.0 };
        let cam = unproject(&depth, &k).unwrap();
        let glob = to_global_coords(&cam, &ei, &e1).unwrap();
        let proj = project(&glob, &ei, &e1, &k).unwrap();
        for v in 0..3 {
            for u in 0..4 {
                let p = proj[v * 4 + u];
                prop_assert!(p.valid);
                prop_assert!((p.u - u as f64).abs() < 1e-4);
                prop_assert!((p.v - v as f64).abs() < 1e-4);
                prop_assert!((p.depth - depth.at(v, u, 0) as f64).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn local_depth_of_globalized_coords_recovers_depth(
        e1 in arb_pose(),
        ei in arb_pose(),
        depth in arb_depth_map(),
    ) {
        let k = Intrinsics { fx: 25.0, fy: 25.0, cx: 2.0, cy: 1.0 };
        let glob = to_global_coords(&unproject(&depth, &k).unwrap(), &ei, &e1).unwrap();
        let local = global_to_local_depth(&glob, &ei, &e1).unwrap();
        for i in 0..12 {
            prop_assert!((local.values[i] - depth.values[i]).abs() < 1e-4);
        }
    }

    #[test]
    fn rotated_normals_stay_unit(e1 in arb_pose(), ei in arb_pose(), seedling in 0u32..1000) {
        let mut n = GeoMap::new(Attribute::Normal, 2, 2);
        for v in 0..2 {
            for u in 0..2 {
                let a = (seedling as f64) * 0.013 + (v * 2 + u) as f64;
                let dir = Vector3::new(a.sin(), (a * 1.7).cos(), (a * 0.3).sin() + 0.2).normalize();
                n.set(v, u, 0, dir.x as f32);
                n.set(v, u, 1, dir.y as f32);
                n.set(v, u, 2, dir.z as f32);
            }
        }
        let g = to_global_normals(&n, &ei, &e1).unwrap();
        g.validate().unwrap();
    }

    #[test]
    fn radius_is_invariant_to_global_origin_distance(depth in arb_depth_map(), e1 in arb_pose()) {
        let k = Intrinsics { fx: 20.0, fy: 20.0, cx: 1.5, cy: 1.0 };
        let cam = unproject(&depth, &k).unwrap();
        // anchor = same camera: radius must equal norm of camera coords
        let glob = to_global_coords(&cam, &e1, &e1).unwrap();
        let r = radius_map(&glob).unwrap();
        for v in 0..3 {
            for u in 0..4 {
                let p = cam.pixel(v, u);
                let expect = ((p[0] as f64).powi(2) + (p[1] as f64).powi(2) + (p[2] as f64).powi(2)).sqrt();
                prop_assert!((r.at(v, u, 0) as f64 - expect).abs() < 1e-5);
            }
        }
    }
}
