#![allow(dead_code)]

use std::path::{Path, PathBuf};

use artready_core::asset::{
    write_urdf, AssetModel, GeometryRef, JointKind, JointLimits, JointSpec, LinkSpec,
};
use artready_core::mesh::{write_obj, TriMesh};

/// Box with a lid hinged on its back top edge, written to `dir` together
/// with its meshes. Negative lid angles sink the lid into the body. The
/// lid starts at `q0`.
pub fn write_lidded_box(dir: &Path, name: &str, q0: f64) -> PathBuf {
    std::fs::create_dir_all(dir.join("meshes")).unwrap();
    write_obj(
        &TriMesh::cuboid([-0.1, -0.1, 0.0], [0.1, 0.1, 0.2]),
        &dir.join("meshes/body.obj"),
    )
    .unwrap();
    write_obj(
        &TriMesh::cuboid([0.0, -0.1, 0.001], [0.2, 0.1, 0.02]),
        &dir.join("meshes/lid.obj"),
    )
    .unwrap();
    let mut body = LinkSpec::new("body");
    body.visuals.push(GeometryRef::mesh("meshes/body.obj"));
    body.collisions.push(GeometryRef::mesh("meshes/body.obj"));
    let mut lid = LinkSpec::new("lid");
    lid.visuals.push(GeometryRef::mesh("meshes/lid.obj"));
    lid.collisions.push(GeometryRef::mesh("meshes/lid.obj"));
    let mount = JointSpec::new("mount", JointKind::Fixed, "frame", "body");
    let mut hinge = JointSpec::new("lid_hinge", JointKind::Revolute, "frame", "lid");
    hinge.origin.xyz = [-0.1, 0.0, 0.2];
    hinge.axis = [0.0, -1.0, 0.0];
    hinge.limits = Some(JointLimits::new(-0.5, 1.5));
    let mut model = AssetModel::new(
        name,
        vec![LinkSpec::new("frame"), body, lid],
        vec![mount, hinge],
    )
    .unwrap();
    model.documented_initial_state = Some([("lid_hinge".to_string(), q0)].into());
    let path = dir.join(format!("{name}.urdf"));
    std::fs::write(&path, write_urdf(&model).unwrap()).unwrap();
    path
}
