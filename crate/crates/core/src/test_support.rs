use crate::network::{build_network, FdmNetwork, Vec3};

/// Three collinear vertices, two edges sharing the middle (free) vertex.
pub fn chain() -> FdmNetwork {
    build_network(
        vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
        vec![(1, 0), (1, 2)],
        &[0, 2],
        vec![[0.0; 3], [0.0, 0.0, -1.0], [0.0; 3]],
    )
    .unwrap()
}

/// `nx × ny` planar grid with its boundary supported and a unit downward
/// load on every free vertex.
pub fn grid(nx: usize, ny: usize, spacing: f64) -> FdmNetwork {
    let mut xyz = Vec::new();
    let mut supports = Vec::new();
    let mut loads: Vec<Vec3> = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            xyz.push([i as f64 * spacing, j as f64 * spacing, 0.0]);
            let boundary = i == 0 || j == 0 || i + 1 == nx || j + 1 == ny;
            if boundary {
                supports.push(j * nx + i);
                loads.push([0.0; 3]);
            } else {
                loads.push([0.0, 0.0, -1.0]);
            }
        }
    }
    let mut edges = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let v = j * nx + i;
            if i + 1 < nx {
                edges.push((v, v + 1));
            }
            if j + 1 < ny {
                edges.push((v, v + nx));
            }
        }
    }
    build_network(xyz, edges, &supports, loads).unwrap()
}
