mod common;

use common::gradcheck;

const TOL: f64 = 1e-3;

#[test]
fn autoencoder_reconstruction() {
    let err = gradcheck::autoencoder_reconstruction();
    assert!(err < TOL, "{err}");
}

#[test]
fn identity_loss() {
    let err = gradcheck::identity_loss();
    assert!(err < TOL, "{err}");
}

#[test]
fn coherence_loss() {
    let err = gradcheck::coherence_loss();
    assert!(err < TOL, "{err}");
}

#[test]
fn wasserstein_term_of_critic() {
    let err = gradcheck::wasserstein_term_of_critic();
    assert!(err < TOL, "{err}");
}

#[test]
fn gradient_penalty_of_critic() {
    let err = gradcheck::gradient_penalty_of_critic();
    assert!(err < TOL, "{err}");
}

#[test]
fn decoder_mse() {
    let err = gradcheck::decoder_mse();
    assert!(err < TOL, "{err}");
}
