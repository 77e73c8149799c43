//! Golden weight files: a committed small network and a digest of the
//! full-size one.

use std::path::PathBuf;

use physmocap::estimator::{Estimator, DEFAULT_HIDDEN, IMU_DIM};
use physmocap::weights::{from_bytes, load, random_networks, to_bytes, GOLDEN_SEED};
use sha2::{Digest, Sha256};

const GOLDEN_HIDDEN: usize = 32;

fn asset(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("assets").join(name)
}

#[test]
fn small_golden_file_is_byte_exact() {
    let nets = random_networks::<f32>(24, GOLDEN_HIDDEN, GOLDEN_SEED);
    let bytes = to_bytes(&nets).unwrap();
    let path = asset("weights_h32.safetensors");
    if std::env::var_os("PHYSMOCAP_UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &bytes).unwrap();
    }
    let committed = std::fs::read(&path).unwrap();
    assert_eq!(bytes, committed);
    let loaded = load::<f32>(&path).unwrap();
    assert_eq!(loaded, nets);
    let wide = load::<f64>(&path).unwrap();
    let est = Estimator::new(wide).unwrap();
    let mut state = est.zero_state();
    let x = nalgebra::DVector::from_fn(IMU_DIM, |i, _| ((i * 7 % 13) as f64 - 6.0) / 10.0);
    let out = est.step(&mut state, &x).unwrap();
    assert!(out.status.phi.iter().all(|v| v.is_finite()));
}

#[test]
fn full_size_networks_match_digest() {
    let nets = random_networks::<f32>(24, DEFAULT_HIDDEN, GOLDEN_SEED);
    let bytes = to_bytes(&nets).unwrap();
    let digest = format!("{:x}", Sha256::digest(&bytes));
    println!("{} bytes sha256 {digest}", bytes.len());
    assert_eq!(digest, FULL_DIGEST);
    assert_eq!(from_bytes::<f32>(&bytes).unwrap(), nets);
}

const FULL_DIGEST: &str = "ecba88a9aa3e714e3a110172e6eaf2ed84d5165ad35ffc871b910afc1e1978c3";
