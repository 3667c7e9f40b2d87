use csanet_core::checks::{run_scope, SCOPES, TOLERANCE};
use csanet_core::Error;

fn check(scope: &str, max_coords: Option<usize>) {
    let report = run_scope(scope, max_coords).unwrap();
    for r in &report.inputs {
        assert!(r.checked > 0, "{scope}: {} checked nothing", r.name);
        assert!(r.max_rel_error <= TOLERANCE, "{scope}: {} rel error {:.3e}", r.name, r.max_rel_error);
    }
}

#[test]
fn every_op_scope_passes() {
    for scope in SCOPES.iter().filter(|s| !matches!(**s, "msca" | "model-mini")) {
        check(scope, None);
    }
}

#[test]
fn sparse_cross_attention_including_mixing_scalars() {
    let report = run_scope("msca", None).unwrap();
    let names: Vec<&str> = report.inputs.iter().map(|r| r.name.as_str()).collect();
    for want in ["x", "y", "msca.w_q", "msca.w_k", "msca.w_v", "msca.alpha", "msca.beta"] {
        assert!(names.contains(&want), "missing {want}");
    }
    assert!(report.passes(TOLERANCE), "{report:?}");
}

#[test]
fn miniature_model_every_parameter_group() {
    let report = run_scope("model-mini", None).unwrap();
    for prefix in ["branch1.", "branch4.", "fusion1.", "fusion2.alpha", "tcn3.", "classifier."] {
        assert!(report.inputs.iter().any(|r| r.name.starts_with(prefix)), "no parameter under {prefix}");
    }
    assert!(report.passes(TOLERANCE), "worst {:.3e}", report.max_rel_error());
}

#[test]
fn unknown_scope_lists_valid_ones() {
    match run_scope("foo", None) {
        Err(Error::Config(msg)) => assert!(msg.contains("topk_softmax") && msg.contains("model-mini")),
        other => panic!("unexpected {other:?}"),
    }
}
