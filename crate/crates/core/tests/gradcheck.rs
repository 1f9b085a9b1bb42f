//! Central finite-difference checks for every differentiable graph op and
//! for the end-to-end anchor loss of each model kind.

mod common;

use common::{end_to_end_rel_err, op_cases, MODEL_TOL, OP_TOL};
use netloc::models::ModelKind;

fn check_op(prefix: &str) {
    let cases: Vec<_> = op_cases().into_iter().filter(|c| c.name.starts_with(prefix)).collect();
    assert!(!cases.is_empty(), "no case named {prefix}*");
    for c in cases {
        let e = c.max_rel_err();
        assert!(e <= OP_TOL, "{}: relative error {e:e}", c.name);
    }
}

#[test]
fn matmul_add_sub_hadamard() {
    check_op("matmul_add_sub_hadamard");
}

#[test]
fn spmm_values_and_rhs() {
    check_op("spmm");
}

#[test]
fn broadcasts_concat_slice_gather_transpose() {
    check_op("broadcast_concat");
}

#[test]
fn pointwise_nonlinearities() {
    check_op("abs_relu");
}

#[test]
fn softmax_rowmax_frobenius() {
    check_op("row_softmax");
}

#[test]
fn edge_ops() {
    check_op("edge_");
}

#[test]
fn dropout_with_fixed_mask() {
    check_op("dropout");
}

#[test]
fn random_three_layer_compositions() {
    check_op("composition_");
}

#[test]
fn end_to_end_anchor_loss_all_kinds() {
    for kind in ModelKind::ALL {
        let e = end_to_end_rel_err(kind);
        assert!(e <= MODEL_TOL, "{kind}: relative error {e:e}");
    }
}
