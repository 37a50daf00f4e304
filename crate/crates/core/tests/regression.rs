//! Frozen outputs of the seeded pipeline pieces. A change here means runs
//! recorded with an earlier build no longer reproduce.

use meshdeform::deform::{forward_pipeline, optimize_direct, DeformJob, DeformNet, LossConfig};
use meshdeform::dmso::{sample_surface, sample_surface_with, scatter_gradients_with};
use meshdeform::losses::{chamfer_with, emd, ChamferOptions, NnMethod};
use meshdeform::mesh::{box_mesh, subdivided_box_mesh};
use meshdeform::par::Exec;
use meshdeform::seed::{self, derive_seed, Stream};
use meshdeform::{PointCloud, Vec3};

fn target() -> PointCloud {
    let m = box_mesh(Vec3::new(-1.0, -0.5, -0.5), Vec3::new(1.0, 0.5, 0.5));
    PointCloud::new(sample_surface(&m, 300, 11).unwrap().points().to_vec()).unwrap()
}

fn small_cfg(exec: Exec) -> LossConfig {
    LossConfig {
        mesh_samples: 128,
        point_samples: 96,
        exec,
        ..Default::default()
    }
}

#[test]
fn seed_derivation_is_frozen() {
    assert_eq!(derive_seed(0, Stream::MeshPass, 0), FROZEN_SEEDS[0]);
    assert_eq!(derive_seed(42, Stream::Target, 3), FROZEN_SEEDS[1]);
    assert_eq!(derive_seed(u64::MAX, Stream::Sample, 1), FROZEN_SEEDS[2]);
}

#[test]
fn surface_samples_are_frozen() {
    let m = box_mesh(Vec3::zeros(), Vec3::new(2.0, 1.0, 1.0));
    let b = sample_surface(&m, 3, 7).unwrap();
    let got: Vec<[f64; 3]> = b.points().iter().map(|p| [p.x, p.y, p.z]).collect();
    assert_eq!(got, FROZEN_SAMPLES);
    assert_eq!(b.face_index(), FROZEN_FACES);
    let again = sample_surface_with(&m, 3, &mut seed::rng(1, Stream::Sample, 0)).unwrap();
    assert_eq!(again, sample_surface(&m, 3, derive_seed(1, Stream::Sample, 0)).unwrap());
}

#[test]
fn losses_are_frozen() {
    let a = sample_surface(&box_mesh(Vec3::zeros(), Vec3::repeat(1.0)), 64, 1).unwrap().points().to_vec();
    let b = target().points()[..64].to_vec();
    assert_eq!(chamfer_with(&a, &b, ChamferOptions::default()).unwrap().value, FROZEN_CD);
    assert!((emd(&a, &b).unwrap().value - FROZEN_EMD).abs() < 1e-12);
}

#[test]
fn direct_run_is_frozen() {
    let src = subdivided_box_mesh(Vec3::repeat(-0.5), Vec3::repeat(0.5), 2);
    let job = DeformJob {
        losses: small_cfg(Exec::default()),
        iterations: 20,
        step_size: 1e-2,
        seed: 3,
        ..DeformJob::new(src, target())
    };
    let out = optimize_direct(&job).unwrap();
    assert_eq!(out.trace.len(), 21);
    assert_eq!(out.trace.first_total().unwrap(), FROZEN_DIRECT[0]);
    assert_eq!(out.trace.last_total().unwrap(), FROZEN_DIRECT[1]);
}

#[test]
fn network_pass_is_frozen() {
    let net = DeformNet::with_widths(&[8, 16], &[16, 8], 5).unwrap();
    let src = subdivided_box_mesh(Vec3::repeat(-0.5), Vec3::repeat(0.5), 2);
    let out = forward_pipeline(&net, &src, &target(), &small_cfg(Exec::default()), 9).unwrap();
    assert_eq!(out.report.total, FROZEN_NETWORK);
}

#[test]
fn execution_mode_does_not_change_results() {
    let src = subdivided_box_mesh(Vec3::repeat(-0.5), Vec3::repeat(0.5), 3);
    let b = sample_surface(&src, 5000, 2).unwrap();
    let g: Vec<f64> = (0..b.len() * 3).map(|i| (i as f64 * 0.37).sin()).collect();
    let n = src.num_vertices();
    assert_eq!(
        scatter_gradients_with(&b, &g, 3, n, Exec::Sequential).unwrap(),
        scatter_gradients_with(&b, &g, 3, n, Exec::Parallel).unwrap()
    );

    let pts = b.points();
    let t = target();
    for method in [NnMethod::KdTree, NnMethod::BruteForce] {
        let s = chamfer_with(pts, t.points(), ChamferOptions { method, exec: Exec::Sequential }).unwrap();
        let p = chamfer_with(pts, t.points(), ChamferOptions { method, exec: Exec::Parallel }).unwrap();
        assert_eq!(s, p);
    }

    let run = |exec| {
        let job = DeformJob {
            losses: small_cfg(exec),
            iterations: 5,
            ..DeformJob::new(src.clone(), t.clone())
        };
        optimize_direct(&job).unwrap()
    };
    let (s, p) = (run(Exec::Sequential), run(Exec::Parallel));
    assert_eq!(s.mesh, p.mesh);
    assert_eq!(s.trace, p.trace);
}

const FROZEN_SEEDS: [u64; 3] = [4054333711111971272, 2065760409411080217, 4007142774386009503];
const FROZEN_SAMPLES: [[f64; 3]; 3] = [
    [0.8197301086872466, 0.12120688085304447, 0.0],
    [1.5508178684607477, 1.0, 0.4967545919344361],
    [0.6717578443226967, 0.9215692364706543, 0.0],
];
const FROZEN_FACES: [usize; 3] = [1, 7, 0];
const FROZEN_CD: f64 = 52.51419320870257;
const FROZEN_EMD: f64 = 69.92024289255949;
const FROZEN_DIRECT: [f64; 2] = [181.7121737284519, 128.2252066538418];
const FROZEN_NETWORK: f64 = 175.98398795896634;

