use crate::numerics::NdArray;

/// Index of the nearest codebook row by squared Euclidean distance; ties go to
/// the lowest index.
pub fn nearest_code(codebook: &NdArray, v: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for k in 0..codebook.rows() {
        let d: f64 = codebook
            .row(k)
            .iter()
            .zip(v)
            .map(|(e, x)| (e - x) * (e - x))
            .sum();
        if d < best.1 {
            best = (k, d);
        }
    }
    best.0
}

/// Nearest-neighbor quantization of one vector: `(index, codebook[index])`.
pub fn quantize(codebook: &NdArray, v: &[f64]) -> (usize, Vec<f64>) {
    let k = nearest_code(codebook, v);
    (k, codebook.row(k).to_vec())
}

/// Quantizes every row of `z: [t, D]`.
pub fn nearest_codes(codebook: &NdArray, z: &NdArray) -> Vec<usize> {
    (0..z.rows()).map(|i| nearest_code(codebook, z.row(i))).collect()
}
