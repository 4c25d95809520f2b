use dispca::verify::run_suite;

#[test]
fn suite_passes() {
    let out = run_suite(5);
    assert_eq!(out.len(), 4);
    for c in &out {
        assert!(c.passed, "{}: {}", c.name, c.detail);
    }
}
