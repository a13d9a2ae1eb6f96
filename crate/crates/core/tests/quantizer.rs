mod common;

#[test]
fn matches_brute_force_with_lowest_index_ties() {
    let (wrong, ties) = common::quantizer_oracle(1000, 2024);
    assert_eq!(wrong, 0);
    // the lattice must actually exercise the tie rule
    assert!(ties > 100, "only {ties} tied latents");
}
