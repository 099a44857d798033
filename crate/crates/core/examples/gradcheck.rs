//! Finite-difference check of every tape primitive, then a hand-built
//! conv -> norm -> relu -> pool -> dense graph.

use spectranet_autodiff::gradcheck::{check, primitive_suite, pseudo_random};
use spectranet_autodiff::{BatchNormMode, Conv2dSpec, Tensor};

fn main() -> Result<(), spectranet_autodiff::AutodiffError> {
    for (name, rep) in primitive_suite(20, 1, 1e-3)? {
        println!("{name:>18}: {:4} partials, max rel error {:.2e}", rep.checked, rep.max_rel_error);
    }
    let t = |shape: Vec<usize>, seed| {
        let n = shape.iter().product();
        Tensor::new(shape, pseudo_random(seed, n)).unwrap()
    };
    let inputs = [
        t(vec![2, 1, 6, 9], 1),
        t(vec![3, 1, 3, 3], 2),
        t(vec![3], 3),
        t(vec![3], 4),
        t(vec![4, 3], 5),
        t(vec![4], 6),
    ];
    let rep = check(&inputs, 7, 1e-5, |tape, v| {
        let h = tape.conv2d(v[0], v[1], Conv2dSpec::new((1, 2), (1, 1)))?;
        let (h, _) = tape.batch_norm(h, v[2], v[3], BatchNormMode::Batch { eps: 1e-5 })?;
        let h = tape.relu(h);
        let h = tape.global_avg_pool(h)?;
        tape.dense(h, v[4], v[5])
    })?;
    println!("composite graph: {} partials, max rel error {:.2e}", rep.checked, rep.max_rel_error);
    Ok(())
}
