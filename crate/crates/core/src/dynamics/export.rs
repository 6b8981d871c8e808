use std::io;
use std::path::Path;

use super::Trajectory;

/// CSV with one row per sample: time, base position, base quaternion, joints.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let joints: Vec<&String> = traj
        .samples
        .first()
        .map(|s| s.q.values.keys().collect())
        .unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t", "x", "y", "z", "qw", "qx", "qy", "qz"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    header.extend(joints.iter().map(|j| j.to_string()));
    w.write_record(&header).expect("in-memory write");
    for (i, s) in traj.samples.iter().enumerate() {
        let t = s.base_pose.translation.vector;
        let r = s.base_pose.rotation;
        let mut row = vec![traj.time(i), t.x, t.y, t.z, r.w, r.i, r.j, r.k];
        row.extend(joints.iter().map(|j| s.q.get(j)));
        w.write_record(row.iter().map(|v| v.to_string()))
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> io::Result<()> {
    std::fs::write(path, trajectory_csv(traj))
}
