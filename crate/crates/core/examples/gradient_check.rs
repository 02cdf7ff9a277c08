//! Compares the tape's gradient of a small latent-graph objective with
//! central finite differences.

use std::rc::Rc;

use anyhow::Result;
use bpgnn::autodiff::{Tape, Var};
use bpgnn::{SparseAdjacency, Tensor};

fn objective<'t>(v: Var<'t>, log_phi: Var<'t>, a: &Rc<SparseAdjacency>) -> Var<'t> {
    let p = v.edge_probabilities(log_phi).unwrap();
    p.prob_boolean_product(a).unwrap().log_eps().sum()
}

fn value(v: &Tensor, log_phi: &Tensor, a: &Rc<SparseAdjacency>) -> f64 {
    let tape = Tape::no_grad();
    objective(tape.param(v.clone()), tape.param(log_phi.clone()), a).item()
}

fn main() -> Result<()> {
    let a = Rc::new(SparseAdjacency::from_undirected_edges(4, &[(0, 1), (1, 2), (2, 3), (3, 0)])?);
    let v0 = Tensor::from_vec(4, 2, vec![0.1, -0.3, 0.5, 0.2, -0.4, 0.7, 0.0, 0.9])?;
    let phi0 = Tensor::scalar(0.3);

    let tape = Tape::new();
    let (v, log_phi) = (tape.param(v0.clone()), tape.param(phi0.clone()));
    let grads = tape.backward(objective(v, log_phi, &a))?;
    let gv = grads.get(v).expect("v is on the tape");

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for m in 0..v0.len() {
        let (mut plus, mut minus) = (v0.clone(), v0.clone());
        plus.data_mut()[m] += h;
        minus.data_mut()[m] -= h;
        let numeric = (value(&plus, &phi0, &a) - value(&minus, &phi0, &a)) / (2.0 * h);
        worst = worst.max((gv.data()[m] - numeric).abs());
        println!("dv[{m}] tape {:+.8} numeric {:+.8}", gv.data()[m], numeric);
    }
    println!("d log phi: {:+.8}", grads.get(log_phi).expect("phi is on the tape").item());
    println!("largest absolute difference {worst:.2e}");
    Ok(())
}
