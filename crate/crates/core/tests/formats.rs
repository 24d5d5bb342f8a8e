//! Binary files against byte layouts assembled by hand, plus round trips.

use ndarray::{array, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stdemand::encodings::EncodingTable;
use stdemand::graphs::GraphSpec;
use stdemand::ingest::DemandTensor;
use stdemand::model::checkpoint::{self, read_tensors, write_tensors, NamedTensor};
use stdemand::model::{forward, ForwardConfig, ModelState, Scene, Window};
use stdemand::Error;

fn f32s(bytes: &mut Vec<u8>, xs: impl IntoIterator<Item = f64>) {
    for x in xs {
        bytes.extend((x as f32).to_le_bytes());
    }
}

#[test]
fn demand_tensor_layout() {
    // n outer, d_x middle, t inner
    let values = Array3::from_shape_fn((2, 1, 3), |(i, _, t)| (10 * i + t) as f64 + 0.5);
    let mask = array![[true, false, true], [true, true, true]];
    let d = DemandTensor::new(values, mask, 1800, 1_700_000_000).unwrap();
    let mut got = Vec::new();
    d.write_to(&mut got).unwrap();

    let mut want = b"IDT1".to_vec();
    for v in [2u32, 1, 3] {
        want.extend(v.to_le_bytes());
    }
    want.extend(1_700_000_000u64.to_le_bytes());
    want.extend(1800u32.to_le_bytes());
    f32s(&mut want, [0.5, 1.5, 2.5, 10.5, 11.5, 12.5]);
    want.extend([1u8, 0, 1, 1, 1, 1]);
    assert_eq!(got, want);
    assert_eq!(DemandTensor::read_from(&want[..]).unwrap(), d);
}

#[test]
fn graph_layout() {
    let g = GraphSpec::new(array![[0.0, 0.5], [0.5, 0.0]]).unwrap();
    let mut got = Vec::new();
    g.write_to(&mut got).unwrap();
    let mut want = b"IGR1".to_vec();
    want.extend(2u32.to_le_bytes());
    f32s(&mut want, [0.0, 0.5, 0.5, 0.0]);
    f32s(&mut want, g.shift.iter().copied());
    assert_eq!(got, want);
    let back = GraphSpec::read_from(&want[..]).unwrap();
    assert_eq!(back.adjacency, g.adjacency);
}

#[test]
fn encoding_layout_and_exact_round_trip() {
    let t = EncodingTable::new(vec!["a".into(), "bé".into()], array![[0.25, -1.0, 3.0], [1e-3, 2.0, -0.5]]).unwrap();
    let mut got = Vec::new();
    t.write_to(&mut got).unwrap();
    let mut want = b"IEMB".to_vec();
    for v in [1u32, 2, 3] {
        want.extend(v.to_le_bytes());
    }
    for id in ["a", "bé"] {
        want.extend((id.len() as u16).to_le_bytes());
        want.extend(id.as_bytes());
    }
    f32s(&mut want, [0.25, -1.0, 3.0, 1e-3, 2.0, -0.5]);
    assert_eq!(got, want);
    let back = EncodingTable::read_from(&got[..]).unwrap();
    let mut again = Vec::new();
    back.write_to(&mut again).unwrap();
    assert_eq!(again, got);
    assert_eq!(back.region_ids, t.region_ids);
}

#[test]
fn checkpoint_layout() {
    let tensors = vec![
        NamedTensor::new("w", vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
        NamedTensor::new("b", vec![3], vec![-1.0, 0.0, 0.5]).unwrap(),
    ];
    let mut got = Vec::new();
    write_tensors(&mut got, &tensors).unwrap();
    let mut want = b"ICKP".to_vec();
    want.extend(1u32.to_le_bytes());
    want.extend(2u32.to_le_bytes());
    for t in &tensors {
        want.extend((t.name.len() as u16).to_le_bytes());
        want.extend(t.name.as_bytes());
        want.push(t.shape.len() as u8);
        for &d in &t.shape {
            want.extend((d as u32).to_le_bytes());
        }
        for &x in &t.data {
            want.extend(x.to_le_bytes());
        }
    }
    assert_eq!(got, want);
    assert_eq!(read_tensors(&got[..]).unwrap(), tensors);
}

#[test]
fn corrupt_files_are_rejected() {
    assert!(matches!(DemandTensor::read_from(&b"IDT2"[..]), Err(Error::Format(_))));
    assert!(matches!(EncodingTable::read_from(&b"IEMB\x02\x00\x00\x00"[..]), Err(Error::Format(_))));
    let mut truncated = Vec::new();
    write_tensors(&mut truncated, &[NamedTensor::new("w", vec![4], vec![1.0; 4]).unwrap()]).unwrap();
    truncated.truncate(truncated.len() - 2);
    assert!(read_tensors(&truncated[..]).is_err());
}

#[test]
fn saved_model_reproduces_forward_bit_exactly() {
    let cfg = ForwardConfig { window: 6, horizon: 3, hidden: 8, node_dim: 4, graph_dim: 4, ffn_layers: 2, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let state = ModelState::<f32>::init(&cfg, 5, &mut rng).unwrap();
    let n = 5;
    let encodings = Array2::from_shape_fn((n, 5), |(i, j)| ((i * 5 + j) as f64 * 0.37).sin());
    let adjacency = Array2::from_shape_fn((n, n), |(i, j)| if i.abs_diff(j) == 1 { 0.6 } else { 0.0 });
    let scene = Scene::<f32>::new(&encodings, &adjacency, 1).unwrap();
    let window = Window {
        history: Array2::from_shape_fn((n, 6), |(i, t)| ((i + 2 * t) as f32 * 0.3).cos()),
        cov_history: ndarray::Array1::from_shape_fn(6 * cfg.d_u, |k| (k as f32 * 0.1).sin()),
        cov_future: ndarray::Array1::from_shape_fn(3 * cfg.d_u, |k| (k as f32 * 0.2).cos()),
    };
    let before = forward(&state, &cfg, &scene, &window).unwrap();

    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("m.ickp");
    checkpoint::save(&path, &state, &cfg).unwrap();
    let (loaded, loaded_cfg) = checkpoint::load::<f32>(&path).unwrap();
    assert_eq!(loaded_cfg, cfg);
    assert_eq!(loaded, state);
    let after = forward(&loaded, &loaded_cfg, &scene, &window).unwrap();
    assert_eq!(before.pred, after.pred);
    assert_eq!(before.recon, after.recon);
    // saving again gives the same bytes
    let again = tmp.path().join("m2.ickp");
    checkpoint::save(&again, &loaded, &loaded_cfg).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}
