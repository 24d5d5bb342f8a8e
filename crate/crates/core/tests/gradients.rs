use stdemand::model::{LayerOrder, ForwardConfig};
use stdemand::training::gradcheck::{gradient_check, micro_config, random_instance};
use stdemand::training::LossKind;

fn assert_close(cfg: &ForwardConfig, n: usize, seed: u64, kind: LossKind) {
    let mut inst = random_instance(cfg, n, 5, seed).unwrap();
    inst.kind = kind;
    let checks = gradient_check(&inst, 1e-4, 64, seed).unwrap();
    for c in &checks {
        assert!(c.checked > 0 || c.skipped == 0, "{}: every coordinate skipped", c.name);
        assert!(c.max_rel_err < 1e-4, "{}: relative error {:.3e} ({} checked, {} skipped)", c.name, c.max_rel_err, c.checked, c.skipped);
    }
}

#[test]
fn micro_model_all_pathways() {
    for seed in 0..4 {
        assert_close(&micro_config(), 3, seed, LossKind::L1);
    }
}

#[test]
fn squared_loss() {
    assert_close(&micro_config(), 3, 11, LossKind::Mse);
}

#[test]
fn pathway_variants() {
    let base = micro_config();
    let variants = [
        ForwardConfig { use_adjacency_graph: false, ..base.clone() },
        ForwardConfig { use_llm_graph: false, ..base.clone() },
        ForwardConfig { use_llm_graph: false, use_encoding: false, ..base.clone() },
        ForwardConfig { spatial: false, ..base.clone() },
        ForwardConfig { layer_order: LayerOrder::FfnThenMp, mp_layers: 2, ffn_layers: 2, ..base.clone() },
        ForwardConfig { neighbor_order: 2, diffusion_k: 3, ..base.clone() },
    ];
    for (k, cfg) in variants.iter().enumerate() {
        assert_close(cfg, 4, 20 + k as u64, LossKind::L1);
    }
}

#[test]
fn sparsified_functional_graph() {
    let cfg = ForwardConfig { functional_dense_max: 3, functional_top_k: 2, ..micro_config() };
    assert_close(&cfg, 6, 31, LossKind::L1);
}
