use parftl::gc::GcPolicy;
use parftl_check::shadow::{run_shadow, ShadowConfig};

fn run(seed: u64, ops: usize, policy: GcPolicy, threaded: bool) {
    let r = run_shadow(&ShadowConfig { seed, ops, policy, threaded }).unwrap();
    eprintln!("{r:?}");
    assert_eq!(r.mismatches, 0, "{:?}", r.examples);
    assert!(r.clean_restarts > 0 && r.dirty_restarts > 0 && r.forced_gc > 0 && r.daemon_ticks > 0, "{r:?}");
}

#[test]
fn shadow_pllgc() {
    run(11, 4000, GcPolicy::Pllgc, false);
}

#[test]
fn shadow_npgc() {
    run(12, 3000, GcPolicy::Npgc, false);
}

#[test]
fn shadow_adaptive() {
    run(13, 3000, GcPolicy::Adaptive, false);
}

#[test]
fn shadow_threaded() {
    run(14, 1500, GcPolicy::Pllgc, true);
}
