//! Allocation-budget checks against the tensor element counters. These run
//! in their own binary and serialize on a lock, since the counters are
//! process-global.

use deltaproj_core::delta::DeltaLinear;
use deltaproj_core::pipeline::{Projector, ProjectorConfig};
use deltaproj_core::tensor::alloc_stats;
use deltaproj_core::{Rng, Tensor};
use std::sync::Mutex;

static COUNTER_LOCK: Mutex<()> = Mutex::new(());

fn lock() -> std::sync::MutexGuard<'static, ()> {
    COUNTER_LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

#[test]
fn counters_see_dense_materialization() {
    let _guard = lock();
    let mut rng = Rng::new(1);
    let dl = DeltaLinear::init(&mut rng, 64, 96, 4).unwrap();
    let before = alloc_stats::snapshot();
    let dense = dl.materialize().unwrap();
    assert_eq!(dense.shape(), &[64, 96]);
    assert!(
        alloc_stats::allocated_since(before) >= 64 * 96,
        "materialize must allocate the dense map"
    );
}

#[test]
fn delta_apply_never_materializes_the_update() {
    let _guard = lock();
    let mut rng = Rng::new(2);
    let dl = DeltaLinear::new(
        rng.fill_symmetric(&[64, 96], 0.5),
        rng.fill_symmetric(&[64, 4], 0.5),
        rng.fill_symmetric(&[4, 96], 0.5),
    )
    .unwrap();
    let x = rng.fill_symmetric(&[2, 96], 1.0);

    let before = alloc_stats::snapshot();
    let y = dl.apply(&x).unwrap();
    let allocated = alloc_stats::allocated_since(before);
    assert_eq!(y.shape(), &[2, 64]);
    // Output + low-rank intermediates stay far under the dense d_out·d_in.
    assert!(
        allocated < 64 * 96,
        "apply allocated {allocated} elements; dense map is {}",
        64 * 96
    );
}

#[test]
fn delta_backward_allocates_parameter_grads_but_no_dense_product() {
    let _guard = lock();
    let mut rng = Rng::new(3);
    let dl = DeltaLinear::new(
        rng.fill_symmetric(&[64, 96], 0.5),
        rng.fill_symmetric(&[64, 4], 0.5),
        rng.fill_symmetric(&[4, 96], 0.5),
    )
    .unwrap();
    let x = rng.fill_symmetric(&[2, 96], 1.0);
    let dy = rng.fill_symmetric(&[2, 64], 1.0);

    let before = alloc_stats::snapshot();
    let (dx, grads) = dl.backward(&x, &dy).unwrap();
    let allocated = alloc_stats::allocated_since(before);
    assert_eq!(dx.shape(), &[2, 96]);
    assert_eq!(grads.base.shape(), &[64, 96]);
    // One dense gradient for the base is unavoidable; a second dense-sized
    // allocation would mean the update product was formed.
    assert!(
        allocated < 2 * 64 * 96,
        "backward allocated {allocated} elements"
    );
}

#[test]
fn kv_pathway_storage_scales_with_memory_not_queries() {
    let _guard = lock();
    let cfg = ProjectorConfig {
        input_dim: 64,
        d_v: 64,
        heads: 4,
        rank: 8,
        memory_tokens: 16,
        ntb_depth: 1,
        ntb_hidden: 64,
        ffn_hidden: 64,
        out_grid: (12, 12),
        window: 3,
        reduce: 0,
        use_emhsa: true,
        use_tb: true,
        use_deltaproj: true,
    };
    let v_tokens = cfg.token_count();
    let (l_m, c, d_v) = (cfg.memory_tokens, cfg.input_dim, cfg.d_v);
    let p = Projector::init(cfg, 5).unwrap();
    let memory = Rng::new(8).fill_symmetric(&[l_m, c], 1.0);

    let before = alloc_stats::snapshot();
    let (k, v) = p.kv_pathway(&memory).unwrap();
    let allocated = alloc_stats::allocated_since(before);
    assert_eq!(k.shape(), &[l_m, d_v]);
    assert_eq!(v.shape(), &[l_m, d_v]);
    // K, V, and the rank-r intermediates are all O(L_m · d); nothing on the
    // order of the V-token query sequence may appear.
    assert!(
        allocated < 8 * l_m * c.max(d_v),
        "kv pathway allocated {allocated} elements"
    );
    assert!(allocated < v_tokens * d_v);
}

#[test]
fn live_counter_returns_to_baseline_after_drops() {
    let _guard = lock();
    let before = alloc_stats::snapshot();
    {
        let t = Tensor::zeros(&[32, 32]);
        assert!(alloc_stats::snapshot().live >= before.live + t.len());
    }
    assert_eq!(alloc_stats::snapshot().live, before.live);
}
