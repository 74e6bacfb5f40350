// Grid label algebra: composing/decomposing labels, the 4-class
// correctness codes, and the per-batch loss factor.

use mtlgrid::tasks::{
    compose_label, compute_factor, decompose_label, derive_aux_label, FactorMode,
};

fn main() {
    // 3 scripts x 10 digits: label 23 is script 2, digit 3
    let (script, digit) = decompose_label(23, 3, 10).unwrap();
    println!("label 23 -> script {}, digit {}", script, digit);
    println!("script 1, digit 7 -> label {}", compose_label(1, 7, 3, 10).unwrap());

    // 11 x 7 character grid
    let (row, col) = decompose_label(76, 11, 7).unwrap();
    println!("label 76 on the 11x7 grid -> row {}, col {}", row, col);

    // correctness codes for predictions against truth 23
    for pred in [23usize, 3, 21, 14] {
        let aux = derive_aux_label(pred, 23, 3, 10).unwrap();
        println!("pred {:>2} vs truth 23 -> aux label {}", pred, aux);
    }

    // the batch factor that scales the main loss
    for labels in [vec![0u8; 4], vec![3, 0, 1, 2], vec![3; 4]] {
        let stat = compute_factor(&labels, FactorMode::Normalized).unwrap();
        println!(
            "aux labels {:?} -> raw sum {}, factor {:.2}",
            labels, stat.raw_sum, stat.factor
        );
    }
}
