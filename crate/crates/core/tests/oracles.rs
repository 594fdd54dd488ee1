//! Block forwards against the straight-line references in `common`.

mod common;

use common::oracle::{max_error, Block};

const TOL: f64 = 1e-5;

fn check(block: Block) {
    let err = max_error(block, 50, 7);
    assert!(err <= TOL, "{block:?}: max deviation {err:e}");
}

#[test]
fn cfb_matches_reference() {
    check(Block::Cfb);
}

#[test]
fn ltfe_matches_reference() {
    check(Block::Ltfe);
}

#[test]
fn ccf_matches_reference() {
    check(Block::Ccf);
}

#[test]
fn csi_matches_reference() {
    check(Block::Csi);
}

#[test]
fn selective_scan_matches_reference() {
    check(Block::Scan);
}

#[test]
fn reference_conv_agrees_with_hand_result() {
    // x = [1, 2, 3], w = [1, -1], pad 1 both sides
    let (y, len) = common::conv1d(&[1.0, 2.0, 3.0], (1, 1, 3), &[1.0, -1.0], 1, 2, None, (1, 1, 1, 1));
    assert_eq!(len, 4);
    assert_eq!(y, [-1.0, -1.0, -1.0, 3.0]);
}
