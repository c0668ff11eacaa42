//! SVR against a brute-force search of the dual.

mod common;

use common::svr::svr_oracle_gap;

#[test]
fn svr_matches_brute_force_dual() {
    let eps = 0.01;
    let gap = svr_oracle_gap(1.0, eps, 1.0);
    assert!(gap <= eps + 1e-3, "svr deviates from the oracle by {gap}");
}
