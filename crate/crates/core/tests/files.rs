use sns_core::checkpoint::{sidecar_path, Checkpoint};
use sns_core::mesh::{icosphere, io};
use sns_core::sns::SnsModel;
use sns_core::sphere::uniform_sphere;
use sns_core::surface::Surface;
use tempfile::TempDir;

#[test]
fn model_checkpoint_round_trips_through_disk() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("m.sns");
    let mut model = SnsModel::init(12, 2, 41, "analytic:sphere").unwrap();
    model.area_scale = 0.731;
    model.save(&path, true).unwrap();

    let back = SnsModel::load(&path).unwrap();
    assert_eq!(back.params(), model.params());
    assert_eq!(back.area_scale, model.area_scale);
    assert_eq!(back.provenance, model.provenance);
    let ps = uniform_sphere(64, 3).points;
    assert_eq!(back.positions(&ps).unwrap(), model.positions(&ps).unwrap());

    // The sidecar holds the same reals, little-endian, in declaration order.
    let bytes = std::fs::read(sidecar_path(&path)).unwrap();
    assert_eq!(bytes.len(), 8 * model.params().num_params());
    let mut from_sidecar = Checkpoint::load(&path).unwrap();
    from_sidecar.load_binary(&bytes).unwrap();
    assert_eq!(from_sidecar.mlp.params, *back.params());
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("m.sns");
    SnsModel::init(8, 1, 0, "x").unwrap().save(&path, false).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let truncated = dir.path().join("t.sns");
    std::fs::write(&truncated, &text[..text.len() / 2]).unwrap();
    assert!(SnsModel::load(&truncated).is_err());
    assert!(SnsModel::load(&dir.path().join("absent.sns")).is_err());
}

#[test]
fn meshes_round_trip_by_extension() {
    let dir = TempDir::new().unwrap();
    let mut mesh = icosphere(2);
    mesh.sphere = None;
    mesh.colors = Some(mesh.vertices.iter().map(|v| [0.5 + 0.5 * v.x, 0.5 + 0.5 * v.y, 0.5 + 0.5 * v.z]).collect());
    for name in ["m.obj", "m.ply"] {
        let path = dir.path().join(name);
        io::save(&mesh, &path).unwrap();
        let back = io::load(&path).unwrap();
        assert_eq!(back.vertices, mesh.vertices, "{name}");
        assert_eq!(back.faces, mesh.faces, "{name}");
        for (a, b) in back.colors.unwrap().iter().zip(mesh.colors.as_ref().unwrap()) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-6, "{name}");
            }
        }
    }
    assert!(io::save(&mesh, &dir.path().join("m.stl")).is_err());
}
