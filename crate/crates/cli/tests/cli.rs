use std::fs;
use std::path::Path;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use bipart_cli::formats::{MatrixFile, NamedMatrix, ReducedFile, TableFile, VectorEntry};
use bipart_cli::{cmd_decompose, cmd_example, cmd_ising_scan, cmd_reduce, JobConfig, ReduceMode};

fn cfg_in(dir: &Path) -> JobConfig {
    JobConfig {
        out_dir: dir.to_path_buf(),
        ..Default::default()
    }
}

fn read_table(path: &Path) -> TableFile {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn toy_example_and_decompose_flow() {
    let dir = TempDir::new().unwrap();
    let cfg = cfg_in(dir.path());
    cmd_example("toy", None, None, &cfg).unwrap();
    let gen_path = dir.path().join("toy-generators.json");
    assert!(gen_path.exists());
    cmd_decompose(&gen_path, &cfg).unwrap();
    let basis = read_table(&dir.path().join("basis.json"));
    let mut dims: Vec<(usize, usize)> = basis
        .blocks
        .iter()
        .map(|b| (*b.heights.iter().max().unwrap(), b.heights.len()))
        .collect();
    dims.sort();
    assert_eq!(dims, vec![(2, 1), (2, 1), (2, 2)]);
}

#[test]
fn spin_orbit_decompose_widths() {
    let dir = TempDir::new().unwrap();
    let cfg = cfg_in(dir.path());
    cmd_example("spin-orbit", Some(1), None, &cfg).unwrap();
    cmd_decompose(&dir.path().join("spin-orbit-l1-generators.json"), &cfg).unwrap();
    let basis = read_table(&dir.path().join("basis.json"));
    let mut widths: Vec<usize> = basis.blocks.iter().map(|b| b.heights.len()).collect();
    widths.sort();
    assert_eq!(widths, vec![2, 4]);
    for b in &basis.blocks {
        assert!(b.heights.iter().all(|&h| h == 1), "single-row blocks");
    }
}

#[test]
fn bound_pair_decompose_widths() {
    let dir = TempDir::new().unwrap();
    let cfg = cfg_in(dir.path());
    cmd_example("bound-pair", None, Some(5), &cfg).unwrap();
    cmd_decompose(&dir.path().join("bound-pair-d5-generators.json"), &cfg).unwrap();
    let basis = read_table(&dir.path().join("basis.json"));
    let widths: Vec<usize> = basis.blocks.iter().map(|b| b.heights.len()).collect();
    assert_eq!(widths, vec![5, 5]);
}

#[test]
fn bound_pair_even_four_is_degenerate() {
    // at d = 4 the two bound-momentum weights coincide (cos(2 pi / d) = 0),
    // the momentum observables cannot separate the orientation parity, and
    // the honest decomposition is one block with multiplicity 2
    let dir = TempDir::new().unwrap();
    let cfg = cfg_in(dir.path());
    cmd_example("bound-pair", None, Some(4), &cfg).unwrap();
    cmd_decompose(&dir.path().join("bound-pair-d4-generators.json"), &cfg).unwrap();
    let basis = read_table(&dir.path().join("basis.json"));
    assert_eq!(basis.blocks.len(), 1);
    assert_eq!(basis.blocks[0].heights, vec![2, 2, 2, 2]);
}

#[test]
fn debug_network_trace_runs() {
    let dir = TempDir::new().unwrap();
    let cfg = JobConfig {
        debug_network: true,
        ..cfg_in(dir.path())
    };
    cmd_example("toy", None, None, &cfg).unwrap();
    cmd_decompose(&dir.path().join("toy-generators.json"), &cfg).unwrap();
}

#[test]
fn reduce_modes_on_two_spin_table() {
    let dir = TempDir::new().unwrap();
    let cfg = cfg_in(dir.path());
    cmd_example("two-spin-total", None, None, &cfg).unwrap();
    let table_path = dir.path().join("two-spin-total-table.json");

    // a random density matrix as input
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dim = 4;
    let mut re = vec![vec![0.0; dim]; dim];
    let mut im = vec![vec![0.0; dim]; dim];
    let g: Vec<Vec<(f64, f64)>> = (0..dim)
        .map(|_| {
            (0..dim)
                .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect()
        })
        .collect();
    // rho = G G^H / tr
    let mut tr = 0.0;
    let mut rho = vec![vec![(0.0, 0.0); dim]; dim];
    for i in 0..dim {
        for j in 0..dim {
            let mut acc = (0.0, 0.0);
            for (&(ar, ai), &(br, bi)) in g[i].iter().zip(&g[j]) {
                acc.0 += ar * br + ai * bi;
                acc.1 += ai * br - ar * bi;
            }
            rho[i][j] = acc;
        }
        tr += rho[i][i].0;
    }
    for i in 0..dim {
        for j in 0..dim {
            re[i][j] = rho[i][j].0 / tr;
            im[i][j] = rho[i][j].1 / tr;
        }
    }
    let rho_path = dir.path().join("rho.json");
    fs::write(
        &rho_path,
        serde_json::to_string(&MatrixFile {
            dim,
            matrices: vec![NamedMatrix {
                name: "rho".into(),
                re,
                im,
            }],
        })
        .unwrap(),
    )
    .unwrap();

    // partial mode works on the non-rectangular table
    cmd_reduce(&rho_path, &table_path, ReduceMode::Partial, &cfg).unwrap();
    let reduced: ReducedFile =
        serde_json::from_str(&fs::read_to_string(dir.path().join("reduced.json")).unwrap())
            .unwrap();
    assert_eq!(reduced.dim, 3);
    assert!(reduced.trace_deficit.abs() < 1e-10);

    // algebra mode rejects it (not rectangular)
    let err = cmd_reduce(&rho_path, &table_path, ReduceMode::Algebra, &cfg).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn reduce_algebra_mode_on_decomposed_basis() {
    let dir = TempDir::new().unwrap();
    let cfg = cfg_in(dir.path());
    cmd_example("toy", None, None, &cfg).unwrap();
    cmd_decompose(&dir.path().join("toy-generators.json"), &cfg).unwrap();

    // maximally mixed state
    let dim = 8;
    let re: Vec<Vec<f64>> = (0..dim)
        .map(|i| (0..dim).map(|j| if i == j { 0.125 } else { 0.0 }).collect())
        .collect();
    let im = vec![vec![0.0; dim]; dim];
    let rho_path = dir.path().join("rho.json");
    fs::write(
        &rho_path,
        serde_json::to_string(&MatrixFile {
            dim,
            matrices: vec![NamedMatrix {
                name: "rho".into(),
                re,
                im,
            }],
        })
        .unwrap(),
    )
    .unwrap();
    cmd_reduce(
        &rho_path,
        &dir.path().join("basis.json"),
        ReduceMode::Algebra,
        &cfg,
    )
    .unwrap();
    let reduced: ReducedFile =
        serde_json::from_str(&fs::read_to_string(dir.path().join("reduced.json")).unwrap())
            .unwrap();
    // 2 + 1 + 1 reduced dimensions, trace fully preserved
    assert_eq!(reduced.dim, 4);
    assert!(reduced.trace_deficit.abs() < 1e-12);
}

#[test]
fn ising_scan_outputs() {
    let dir = TempDir::new().unwrap();
    let cfg = cfg_in(dir.path());
    cmd_ising_scan(3, 0.5, "alpha", &cfg).unwrap();
    let csv = fs::read_to_string(dir.path().join("scan.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "candidate_index,permutation,q,class_id,distinct_map_id"
    );
    assert_eq!(lines.len(), 37, "header plus 36 candidates");
    for i in 0..6 {
        assert!(dir.path().join(format!("selected-{i}.json")).exists());
    }
    assert!(!dir.path().join("selected-6.json").exists());

    // x-phase scan selects a single table
    let dir2 = TempDir::new().unwrap();
    let cfg2 = cfg_in(dir2.path());
    cmd_ising_scan(3, 0.7, "alpha", &cfg2).unwrap();
    assert!(dir2.path().join("selected-0.json").exists());
    assert!(!dir2.path().join("selected-1.json").exists());
}

#[test]
fn ising_scan_respects_cap() {
    let dir = TempDir::new().unwrap();
    let cfg = JobConfig {
        cap: 10,
        ..cfg_in(dir.path())
    };
    let err = cmd_ising_scan(3, 0.5, "alpha", &cfg).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn malformed_input_exits_with_parse_code() {
    let dir = TempDir::new().unwrap();
    let cfg = cfg_in(dir.path());
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    let err = cmd_decompose(&bad, &cfg).unwrap_err();
    assert_eq!(err.exit_code(), 2);

    let missing = dir.path().join("missing.json");
    let err = cmd_decompose(&missing, &cfg).unwrap_err();
    assert_eq!(err.exit_code(), 2);

    let err = cmd_example("nonsense", None, None, &cfg).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn non_hermitian_input_exits_with_numeric_code() {
    let dir = TempDir::new().unwrap();
    let cfg = cfg_in(dir.path());
    let path = dir.path().join("gen.json");
    let file = MatrixFile {
        dim: 2,
        matrices: vec![NamedMatrix {
            name: "M".into(),
            re: vec![vec![0.0, 1.0], vec![0.0, 0.0]],
            im: vec![vec![0.0; 2]; 2],
        }],
    };
    fs::write(&path, serde_json::to_string(&file).unwrap()).unwrap();
    let err = cmd_decompose(&path, &cfg).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Matrix files round-trip bit-exactly through serialization.
    #[test]
    fn matrix_file_roundtrip(seed in 0u64..1000, dim in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..dim)
                .map(|_| (0..dim).map(|_| rng.gen_range(-1e3..1e3)).collect())
                .collect()
        };
        let file = MatrixFile {
            dim,
            matrices: vec![NamedMatrix {
                name: "A".into(),
                re: grid(&mut rng),
                im: grid(&mut rng),
            }],
        };
        let text = serde_json::to_string(&file).unwrap();
        let back: MatrixFile = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(&back, &file);
        // exact bit equality of every float
        for (a, b) in file.matrices[0].re.iter().flatten().zip(back.matrices[0].re.iter().flatten()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    /// Table files round-trip bit-exactly, including heights and labels.
    #[test]
    fn table_file_roundtrip(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // random orthonormal cells from a QR factorization
        let dim = 4usize;
        let g = nalgebra::DMatrix::<num_complex::Complex64>::from_fn(dim, dim, |_, _| {
            num_complex::Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let q = g.qr().q();
        let table = bipart_core::bpt::BipartitionTable::from_columns(
            dim,
            vec![vec![
                (vec![q.column(0).into_owned(), q.column(1).into_owned()], "a".into()),
                (vec![q.column(2).into_owned()], "b".into()),
                (vec![q.column(3).into_owned()], "c".into()),
            ]],
        )
        .unwrap();
        let file = TableFile::from_table(&table);
        let text = serde_json::to_string(&file).unwrap();
        let back: TableFile = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(&back, &file);
        let table2 = back.to_table().unwrap();
        prop_assert_eq!(table2.dim(), table.dim());
        for (b1, b2) in table.blocks().iter().zip(table2.blocks()) {
            prop_assert_eq!(b1.heights(), b2.heights());
            for (c1, c2) in b1.columns().iter().zip(b2.columns()) {
                prop_assert_eq!(&c1.label, &c2.label);
                for (v1, v2) in c1.cells.iter().zip(&c2.cells) {
                    for (x, y) in v1.iter().zip(v2.iter()) {
                        prop_assert_eq!(x.re.to_bits(), y.re.to_bits());
                        prop_assert_eq!(x.im.to_bits(), y.im.to_bits());
                    }
                }
            }
        }
    }
}

#[test]
fn table_file_rejects_inconsistent_counts() {
    let file = TableFile {
        dim: 2,
        blocks: vec![bipart_cli::formats::TableBlockEntry {
            q: 0,
            heights: vec![2],
            labels: vec!["a".into()],
            vectors: vec![VectorEntry {
                re: vec![1.0, 0.0],
                im: vec![0.0, 0.0],
            }],
        }],
    };
    assert!(file.to_table().is_err());
}
