use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sns_core::mesh::io::{parse_obj, parse_ply, write_obj, write_ply, PlyFormat};
use sns_core::mesh::{analytic_shapes, embed_star_shaped, icosphere, mesh_from_surface, AnalyticSurface, SphereLocator, TriMesh};
use sns_core::surface::Surface;
use sns_core::SnsError;

/// An L-shaped hexagon extruded over z in [0, 1]. Its vertex mean lies
/// outside the solid, so radial projection from it folds faces over.
fn l_prism() -> TriMesh {
    let outline = [(0.0, 0.0), (3.0, 0.0), (3.0, 1.0), (1.0, 1.0), (1.0, 3.0), (0.0, 3.0)];
    let mut vertices = Vec::new();
    for z in [0.0, 1.0] {
        vertices.extend(outline.iter().map(|&(x, y)| Vector3::new(x, y, z)));
    }
    let cap = [[0, 1, 2], [0, 2, 3], [0, 3, 5], [3, 4, 5]];
    let mut faces: Vec<[usize; 3]> = cap.iter().map(|&[a, b, c]| [a + 6, b + 6, c + 6]).collect();
    faces.extend(cap.iter().map(|&[a, b, c]| [a, c, b]));
    for i in 0..6 {
        let j = (i + 1) % 6;
        faces.push([i, j, j + 6]);
        faces.push([i, j + 6, i + 6]);
    }
    TriMesh::new(vertices, faces).unwrap()
}

#[test]
fn l_prism_is_a_closed_outward_mesh() {
    let m = l_prism();
    assert_eq!(m.euler_characteristic(), 2);
    // Signed volume of an outward mesh is positive: 5 units of area times 1.
    let vol: f64 = m
        .faces
        .iter()
        .map(|f| m.vertices[f[0]].dot(&m.vertices[f[1]].cross(&m.vertices[f[2]])) / 6.0)
        .sum();
    assert!((vol - 5.0).abs() < 1e-12);
}

#[test]
fn l_prism_is_not_star_shaped_from_its_centroid() {
    let m = l_prism();
    let c = m.centroid();
    assert!((c.x - 4.0 / 3.0).abs() < 1e-12 && (c.y - 4.0 / 3.0).abs() < 1e-12);
    match embed_star_shaped(&m) {
        Err(SnsError::NotStarShaped { faces }) => assert!(!faces.is_empty()),
        other => panic!("expected a not-star-shaped error, got {other:?}"),
    }
}

#[test]
fn icosphere_levels() {
    assert_eq!(icosphere(0).vertices.len(), 12);
    assert_eq!(icosphere(0).faces.len(), 20);
    assert_eq!(icosphere(4).vertices.len(), 2562);
    assert_eq!(icosphere(5).vertices.len(), 10242);
    for level in 0..=5 {
        let m = icosphere(level);
        assert_eq!(m.euler_characteristic(), 2);
        assert!(m.vertices.iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
    }
}

#[test]
fn star_shaped_embeddings() {
    let m = icosphere(3);
    let e = embed_star_shaped(&m).unwrap();
    for (a, b) in e.sphere.as_ref().unwrap().iter().zip(&m.vertices) {
        assert!((a - b).norm() < 1e-12);
    }
    let ell = icosphere(3).scaled([2.0, 1.0, 1.0]).unwrap();
    let e = embed_star_shaped(&ell).unwrap();
    assert!(e.flipped_spherical_faces(e.sphere.as_ref().unwrap()).is_empty());
}

#[test]
fn correspondence_round_trips() {
    let mesh = embed_star_shaped(&icosphere(3).scaled([1.7, 1.0, 0.6]).unwrap()).unwrap();
    let sphere = mesh.sphere.clone().unwrap();
    let loc = SphereLocator::new(&mesh).unwrap();
    for (i, s) in sphere.iter().enumerate() {
        assert_eq!(loc.locate(s).unwrap().point, mesh.vertices[i]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..2000 {
        let f = rng.gen_range(0..mesh.faces.len());
        let (a, b): (f64, f64) = (rng.gen(), rng.gen());
        let (a, b) = if a + b > 1.0 { (1.0 - a, 1.0 - b) } else { (a, b) };
        let w = [1.0 - a - b, a, b];
        let idx = mesh.faces[f];
        let x: Vector3<f64> = (0..3).map(|k| mesh.vertices[idx[k]] * w[k]).sum();
        let p: Vector3<f64> = (0..3).map(|k| sphere[idx[k]] * w[k]).sum::<Vector3<f64>>().normalize();
        let c = loc.locate(&p).unwrap();
        assert!((c.point - x).norm() < 1e-12, "{:e}", (c.point - x).norm());
        let [va, vb, vc] = mesh.face_vertices(c.face);
        let n = (vb - va).cross(&(vc - va)).normalize();
        assert!((c.point - va).dot(&n).abs() < 1e-12);
    }
}

#[test]
fn face_centres_have_equal_weights() {
    let mesh = embed_star_shaped(&icosphere(2)).unwrap();
    let loc = SphereLocator::new(&mesh).unwrap();
    for f in 0..mesh.faces.len() {
        let [a, b, c] = mesh.face_vertices(f);
        let centre = (a + b + c) / 3.0;
        let hit = loc.locate(&centre.normalize()).unwrap();
        assert_eq!(hit.face, f);
        assert!(hit.weights.iter().all(|w| (w - 1.0 / 3.0).abs() < 1e-12));
        assert!((hit.point - centre).norm() < 1e-12);
    }
}

#[test]
fn analytic_catalog() {
    let shapes = analytic_shapes();
    assert!(shapes.len() >= 4);
    let ps = [Vector3::new(0.6, 0.0, 0.8), Vector3::new(0.0, -1.0, 0.0)];
    let unit = AnalyticSurface::unit_sphere();
    for p in &ps {
        assert_eq!(unit.position(p).unwrap(), *p);
        let flat = AnalyticSurface::radial_star(0.0, 6.0);
        assert!((flat.position(p).unwrap() - p).norm() < 1e-15);
    }
    for s in &shapes {
        let m = mesh_from_surface(s, 2).unwrap();
        m.validate().unwrap();
    }
}

#[test]
fn mesh_files_round_trip() {
    let mut m = icosphere(2);
    m.sphere = None;
    let back = parse_obj(&write_obj(&m)).unwrap();
    assert_eq!(back.faces, m.faces);
    for (a, b) in back.vertices.iter().zip(&m.vertices) {
        assert_eq!(a, b);
    }
    let mut colored = m.clone();
    colored.colors = Some(m.vertices.iter().map(|v| [v.x.abs(), v.y.abs(), v.z.abs()]).collect());
    for format in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
        let bytes = write_ply(&colored, format);
        let back = parse_ply(&bytes).unwrap();
        assert_eq!(back.vertices, colored.vertices);
        assert_eq!(back.faces, colored.faces);
        for (a, b) in back.colors.unwrap().iter().zip(colored.colors.as_ref().unwrap()) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-6);
            }
        }
        assert!(parse_ply(&bytes[..bytes.len() - 7]).is_err());
    }
}
