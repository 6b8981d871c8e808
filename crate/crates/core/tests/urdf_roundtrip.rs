use std::collections::BTreeMap;

use artready_core::asset::{
    parse_urdf, write_urdf, AssetModel, GeometryRef, Inertia, JointDynamics, JointKind,
    JointLimits, JointSpec, LinkSpec,
};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-10.0..10.0f64, -1e-6..1e-6f64, Just(0.0), Just(1.0 / 3.0)]
}

fn arb_link(i: usize) -> impl Strategy<Value = LinkSpec> {
    (
        proptest::option::of(1e-4..50.0f64),
        proptest::option::of((1e-6..1.0f64, 1e-6..1.0f64, 1e-6..1.0f64, -1e-3..1e-3f64)),
        proptest::option::of([finite(), finite(), finite()]),
        any::<bool>(),
    )
        .prop_map(move |(mass, inertia, com, mesh)| {
            let mut l = LinkSpec::new(format!("link_{i}"));
            l.mass = mass;
            l.inertia = inertia.map(|(a, b, c, off)| Inertia {
                ixy: off,
                ..Inertia::diagonal(a, b, c)
            });
            l.center_of_mass = com;
            if mesh {
                l.visuals
                    .push(GeometryRef::mesh(format!("meshes/part{i}.obj")));
                l.collisions
                    .push(GeometryRef::mesh(format!("meshes/part{i}.stl")));
            }
            l
        })
}

fn arb_joint(i: usize) -> impl Strategy<Value = JointSpec> {
    (
        0..i,
        0..4usize,
        [finite(), finite(), finite()],
        (-3.0..0.0f64, 0.0..3.0f64),
        proptest::option::of((0.0..2.0f64, 0.0..1.0f64, 0.0..5.0f64)),
    )
        .prop_map(move |(parent, kind, xyz, (lo, hi), dynamics)| {
            let kind = [
                JointKind::Fixed,
                JointKind::Revolute,
                JointKind::Prismatic,
                JointKind::Continuous,
            ][kind];
            let mut j = JointSpec::new(
                format!("joint_{i}"),
                kind,
                format!("link_{parent}"),
                format!("link_{i}"),
            );
            j.origin.xyz = xyz;
            if kind != JointKind::Fixed {
                j.axis = [0.0, 0.0, 1.0];
            }
            if matches!(kind, JointKind::Revolute | JointKind::Prismatic) {
                j.limits = Some(JointLimits::new(lo, hi));
            }
            if kind != JointKind::Fixed {
                j.dynamics = dynamics.map(|(b, m, k)| JointDynamics::triplet(b, m, k));
            }
            j
        })
}

fn arb_model() -> impl Strategy<Value = AssetModel> {
    (1..7usize)
        .prop_flat_map(|n| {
            let links: Vec<_> = (0..n).map(arb_link).collect();
            let joints: Vec<_> = (1..n).map(arb_joint).collect();
            (links, joints, any::<bool>())
        })
        .prop_map(|(links, joints, documented)| {
            let mut m = AssetModel::new("random", links, joints).unwrap();
            if documented {
                let state: BTreeMap<String, f64> = m
                    .joints
                    .iter()
                    .filter(|j| j.kind.is_active())
                    .map(|j| {
                        (
                            j.name.clone(),
                            j.bounds().map_or(0.0, |(lo, hi)| 0.5 * (lo + hi)),
                        )
                    })
                    .collect();
                m.documented_initial_state = Some(state);
            }
            m
        })
}

proptest! {
    #[test]
    fn write_then_parse_is_identity(model in arb_model()) {
        let text = write_urdf(&model).unwrap();
        let back = parse_urdf(&text).unwrap();
        prop_assert_eq!(&back, &model);
        prop_assert_eq!(write_urdf(&back).unwrap(), text);
    }
}
