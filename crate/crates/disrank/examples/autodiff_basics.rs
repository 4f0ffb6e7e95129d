//! Reverse-mode autodiff on the arena tape, then a few Adam steps on a toy
//! least-squares problem.
//!
//! Run with: cargo run --example autodiff_basics

use disrank::numerics::{Adam, Prng, Tape};

fn main() {
    // d(mse(relu(x W), y)) / dW by hand is already fiddly; the tape does it.
    let mut tape = Tape::new();
    let x = tape.leaf(vec![0.5, -1.0, 2.0, 0.25], &[2, 2], false).unwrap();
    let w = tape.leaf(vec![0.1, -0.2, 0.3, 0.4], &[2, 2], true).unwrap();
    let y = tape.leaf(vec![1.0, 0.0, 0.5, 0.5], &[2, 2], false).unwrap();
    let h = tape.matmul(x, w).unwrap();
    let r = tape.relu(h).unwrap();
    let loss = tape.mse(r, y).unwrap();
    println!("loss = {:.6}", tape.scalar(loss).unwrap());

    tape.backward(loss).unwrap();
    println!("dloss/dW = {:?}", tape.grad(w).unwrap());

    // Fit w so that x w ≈ y, fresh graph every step. Parameters live outside
    // the tape; each iteration leases them in, backprops, and steps.
    let mut rng = Prng::new(42);
    let mut weights: Vec<f32> = (0..4).map(|_| 0.1 * rng.normal_f32()).collect();
    let mut opt = Adam::new(0.05);
    for step in 0..200 {
        let mut tape = Tape::new();
        let x = tape.leaf(vec![0.5, -1.0, 2.0, 0.25], &[2, 2], false).unwrap();
        let y = tape.leaf(vec![1.0, 0.0, 0.5, 0.5], &[2, 2], false).unwrap();
        let w = tape.leaf(weights.clone(), &[2, 2], true).unwrap();
        let h = tape.matmul(x, w).unwrap();
        let loss = tape.mse(h, y).unwrap();
        let value = tape.scalar(loss).unwrap();
        tape.backward(loss).unwrap();
        opt.step(&mut tape, &[w]).unwrap();
        weights = tape.data(w).to_vec();
        if step % 50 == 0 {
            println!("step {step:3} loss {value:.6}");
        }
    }
    println!("fitted W = {weights:?}");

    // Seeded streams are independent by name and reproducible by seed.
    let root = Prng::new(7);
    let mut s1 = root.substream("alpha");
    let mut s2 = root.substream("alpha");
    let a: Vec<u64> = (0..3).map(|_| s1.next_u64()).collect();
    let b: Vec<u64> = (0..3).map(|_| s2.next_u64()).collect();
    assert_eq!(a, b);
    println!("substream 'alpha' first draw: {}", a[0]);
}
