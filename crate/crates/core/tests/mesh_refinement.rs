//! Mesh construction, red refinement and marked-edge bisection.

use proptest::prelude::*;

use quadcurl::mesh::{bisect, build, kuhn_box, lshape_prism, read_mesh_files, refine_uniform, write_mesh_files, MarkSet, MeshError, TetMesh};

fn reference_tet() -> TetMesh {
    build(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], vec![[0, 1, 2, 3]]).unwrap()
}

fn two_tets() -> TetMesh {
    build(
        vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, -1.0]],
        vec![[0, 1, 2, 3], [0, 2, 1, 4]],
    )
    .unwrap()
}

fn euler(m: &TetMesh) -> i64 {
    m.num_vertices() as i64 - m.num_edges() as i64 + m.num_faces() as i64 - m.num_tets() as i64
}

#[test]
fn reference_tet_topology_and_geometry() {
    let m = reference_tet();
    assert_eq!((m.num_edges(), m.num_faces()), (6, 4));
    assert!((0..4).all(|f| m.is_boundary_face(f)));
    let g = m.geometry();
    assert!((g.tet_volume[0] - 1.0 / 6.0).abs() < 1e-15);
    assert!((g.tet_diameter[0] - 2f64.sqrt()).abs() < 1e-15);
    let s = g.grad_lambda[0].iter().fold([0.0; 3], |a, v| [a[0] + v[0], a[1] + v[1], a[2] + v[2]]);
    assert!(s.iter().all(|c| c.abs() < 1e-14));
}

#[test]
fn glued_pair_counts() {
    let m = two_tets();
    assert_eq!((m.num_vertices(), m.num_edges(), m.num_faces(), m.num_tets()), (5, 9, 7, 2));
    assert_eq!((0..7).filter(|&f| !m.is_boundary_face(f)).count(), 1);
    assert_eq!(euler(&m), 1);
}

#[test]
fn kuhn_cube_counts() {
    let m = kuhn_box([0.0; 3], [1.0; 3], [1; 3]).unwrap();
    assert_eq!((m.num_vertices(), m.num_edges(), m.num_faces(), m.num_tets()), (8, 19, 18, 6));
    assert_eq!(euler(&m), 1);
}

#[test]
fn build_rejects_bad_input() {
    let v = vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    assert!(matches!(build(v.clone(), vec![[0, 1, 2, 7]]), Err(MeshError::IndexOutOfRange { .. })));
    assert!(matches!(build(v.clone(), vec![[0, 1, 2, 3], [3, 2, 1, 0]]), Err(MeshError::DuplicateTet { .. })));
    let flat = vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]];
    assert!(matches!(build(flat, vec![[0, 1, 2, 3]]), Err(MeshError::DegenerateTet { .. })));
}

#[test]
fn negative_orientation_is_reordered() {
    let m = build(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], vec![[1, 0, 2, 3]]).unwrap();
    assert!(m.geometry().tet_volume[0] > 0.0);
    m.check_invariants().unwrap();
}

#[test]
fn interior_normal_points_to_higher_tet() {
    let m = two_tets();
    let f = (0..m.num_faces()).find(|&f| !m.is_boundary_face(f)).unwrap();
    let [t0, t1] = m.face_tets(f);
    assert!(t0 < t1);
    let n = m.geometry().face_normal[f];
    let c0 = m.tet_centroid(t0);
    let c1 = m.tet_centroid(t1);
    let d = [c1[0] - c0[0], c1[1] - c0[1], c1[2] - c0[2]];
    assert!(n[0] * d[0] + n[1] * d[1] + n[2] * d[2] > 0.0);
}

#[test]
fn red_refinement_counts() {
    let r = refine_uniform(&reference_tet()).unwrap();
    assert_eq!((r.num_tets(), r.num_vertices()), (8, 10));
    let c = refine_uniform(&kuhn_box([0.0; 3], [1.0; 3], [1; 3]).unwrap()).unwrap();
    assert_eq!(c.num_tets(), 48);
    for m in [&r, &c] {
        m.check_invariants().unwrap();
        assert!((m.total_volume() - if m.num_tets() == 8 { 1.0 / 6.0 } else { 1.0 }).abs() < 1e-14);
        for t in 0..m.num_tets() {
            assert!(m.parent(t) < m.num_tets() / 8);
        }
    }
}

#[test]
fn empty_mark_set_is_a_no_op() {
    let m = kuhn_box([0.0; 3], [1.0; 3], [2; 3]).unwrap();
    let b = bisect(&m, &MarkSet::new(Vec::new())).unwrap();
    assert_eq!(b.vertices(), m.vertices());
    assert_eq!(b.tets(), m.tets());
}

#[test]
fn marking_one_of_two_tets_stays_conforming() {
    let m = two_tets();
    let b = bisect(&m, &MarkSet::new(vec![0])).unwrap();
    b.check_invariants().unwrap();
    assert!(b.num_tets() >= 3);
    assert!((0..b.num_tets()).filter(|&t| b.parent(t) == 0).count() >= 2);
}

#[test]
fn invalid_mark_is_an_error() {
    let m = two_tets();
    assert!(matches!(bisect(&m, &MarkSet::new(vec![5])), Err(MeshError::InvalidMark { .. })));
}

#[test]
fn repeated_global_bisection_keeps_shape() {
    let mut m = kuhn_box([0.0; 3], [1.0; 3], [1; 3]).unwrap();
    let initial = m.min_dihedral_angle();
    let mut worst = initial;
    for _ in 0..6 {
        m = bisect(&m, &MarkSet::all(m.num_tets())).unwrap();
        m.check_invariants().unwrap();
        worst = worst.min(m.min_dihedral_angle());
    }
    assert_eq!(m.num_tets(), 6 * 64);
    // Kuhn tets bisect into a finite number of similarity classes.
    assert!(worst >= 0.5 * initial, "initial {initial}, worst {worst}");
}

#[test]
fn lshape_generator_volume() {
    let m = lshape_prism(0.5).unwrap();
    assert_eq!(m.num_tets(), 72);
    assert!((m.total_volume() - 1.5).abs() < 1e-13);
    assert!(lshape_prism(0.3).is_err());
}

#[test]
fn mesh_files_round_trip() {
    let dir = std::env::temp_dir().join(format!("quadcurl-mesh-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let (nodes, elems) = (dir.join("nodes.txt"), dir.join("elements.txt"));
    let m = lshape_prism(0.5).unwrap();
    write_mesh_files(&m, &nodes, &elems).unwrap();
    let r = read_mesh_files(&nodes, &elems).unwrap();
    assert_eq!(r.vertices(), m.vertices());
    assert_eq!(r.num_tets(), m.num_tets());
    std::fs::remove_dir_all(&dir).unwrap();
}

fn marks(ntets: usize, picks: &[usize]) -> MarkSet {
    MarkSet::new(picks.iter().map(|p| p % ntets).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bisection_preserves_invariants(rounds in prop::collection::vec(prop::collection::vec(0usize..10_000, 1..6), 1..5)) {
        let mut m = kuhn_box([0.0; 3], [1.0; 3], [1; 3]).unwrap();
        for picks in rounds {
            let set = marks(m.num_tets(), &picks);
            let next = bisect(&m, &set).unwrap();
            prop_assert!(next.check_invariants().is_ok());
            prop_assert!((next.total_volume() - 1.0).abs() < 1e-12);
            // Parent vertices survive with identical coordinates.
            prop_assert_eq!(&next.vertices()[..m.num_vertices()], m.vertices());
            let vol = &next.geometry().tet_volume;
            let pvol = &m.geometry().tet_volume;
            for &t in set.as_slice() {
                let children: Vec<usize> = (0..next.num_tets()).filter(|&c| next.parent(c) == t).collect();
                prop_assert!(children.len() >= 2);
                let total: f64 = children.iter().map(|&c| vol[c]).sum();
                prop_assert!((total - pvol[t]).abs() < 1e-14);
                for &c in &children {
                    prop_assert!(next.generation(c) > m.generation(t));
                }
            }
            // Children of a single bisection are exact halves.
            for t in 0..m.num_tets() {
                let children: Vec<usize> = (0..next.num_tets()).filter(|&c| next.parent(c) == t).collect();
                if children.len() == 2 {
                    for &c in &children {
                        prop_assert!((vol[c] - 0.5 * pvol[t]).abs() <= 1e-14 * pvol[t].max(1.0));
                        prop_assert_eq!(next.generation(c), m.generation(t) + 1);
                    }
                }
            }
            prop_assert!(next.num_tets() > m.num_tets());
            m = next;
        }
    }

    #[test]
    fn red_refinement_conserves_volume(lo in -2.0f64..0.0, len in 0.5f64..3.0) {
        let m = kuhn_box([lo; 3], [lo + len; 3], [1; 3]).unwrap();
        let r = refine_uniform(&m).unwrap();
        prop_assert!(r.check_invariants().is_ok());
        prop_assert!((r.total_volume() - len.powi(3)).abs() <= 1e-12 * len.powi(3));
        let vol = &r.geometry().tet_volume;
        for t in 0..m.num_tets() {
            let s: f64 = (0..r.num_tets()).filter(|&c| r.parent(c) == t).map(|c| vol[c]).sum();
            prop_assert!((s - m.geometry().tet_volume[t]).abs() <= 1e-14 * len.powi(3));
        }
    }
}
