mod common;

use std::time::Instant;

use common::{gradcheck_case, gradcheck_configs};

#[test]
fn every_partial_matches_central_differences() {
    let start = Instant::now();
    for (i, cfg) in gradcheck_configs().iter().enumerate() {
        let (worst, checked, shrunk) = gradcheck_case(cfg, i as u64);
        println!("config {i}: {checked} partials, worst relative error {worst:.2e}, {shrunk} needed a smaller step");
        assert!(worst < 1e-4, "config {i}: {worst:e}");
    }
    println!("{:?}", start.elapsed());
}
